mod common;

use tgfield::geometry::Volume;
use tgfield::recon::{self, AsdPocsConfig, CglsConfig, GaussianInitConfig};
use tgfield::train::losses::psnr;
use tgfield::Error;

#[test]
fn cgls_data_residual_never_increases() {
    let (p, proj, _) = common::phantom_scan(32, 10, Some(1e5));
    let cfg = CglsConfig { max_iters: 25, tol: 0.0, nonneg_final: true };
    let (_, res) = recon::cgls_with_report(&p, &proj, &cfg).unwrap();
    assert_eq!(res.iterations, 25);
    for w in res.residual_norms.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn asd_pocs_descends_tv_and_beats_cgls() {
    let (p, proj, truth) = common::phantom_scan(32, 10, Some(1e5));
    let cg = recon::cgls(&p, &proj, &CglsConfig::default()).unwrap();
    let (x, report) = recon::asd_pocs_with_report(&cg, &p, &proj, &AsdPocsConfig::default()).unwrap();
    assert_eq!(report.tv_phases.len(), 20);
    for phase in &report.tv_phases {
        assert!(phase.len() >= 2);
        for w in phase.windows(2) {
            assert!(w[1] <= w[0], "TV rose within a descent phase: {} -> {}", w[0], w[1]);
        }
    }
    let range = truth.max();
    let before = psnr(&cg, &truth, range).unwrap();
    let after = psnr(&x, &truth, range).unwrap();
    assert!(after > before, "ASD-POCS {after:.3} dB vs CGLS {before:.3} dB");
}

#[test]
fn asd_pocs_without_tv_is_projected_sart() {
    let (p, proj, _) = common::phantom_scan(16, 6, None);
    let cfg = AsdPocsConfig { outer_iters: 3, tv_iters: 0, art_relax: 0.8, ..Default::default() };
    let x0 = Volume::zeros(p.grid);
    let got = recon::asd_pocs(&x0, &p, &proj, &cfg).unwrap();
    let mut want = x0;
    for _ in 0..3 {
        want = recon::sart_pass(&want, &p, &proj, 0.8).unwrap();
        want.data.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    assert_eq!(got, want);
}

#[test]
fn sart_reduces_the_data_residual() {
    let (p, proj, _) = common::phantom_scan(16, 6, None);
    let resid = |x: &Volume| -> f64 {
        let ax = p.forward(x).unwrap();
        ax.data.iter().zip(&proj.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut x = Volume::zeros(p.grid);
    let mut last = resid(&x);
    for _ in 0..4 {
        x = recon::sart_pass(&x, &p, &proj, 1.0).unwrap();
        let r = resid(&x);
        assert!(r < last);
        last = r;
    }
}

#[test]
fn gaussian_init_from_refined_volume() {
    let (p, proj, _) = common::phantom_scan(16, 6, None);
    let x = recon::cgls(&p, &proj, &CglsConfig::default()).unwrap();
    let cfg = GaussianInitConfig { n_points: 300, ..Default::default() };
    let set = recon::volume_to_gaussians(&x, &cfg).unwrap();
    assert_eq!(set.len(), 300);
    let bb = p.grid.bbox();
    assert!(set.primitives.iter().all(|g| bb.contains(g.mu) && g.density() > cfg.density_threshold));
    let again = recon::volume_to_gaussians(&x, &cfg).unwrap();
    assert_eq!(set, again);
}

#[test]
fn empty_refined_volume_reports_the_threshold() {
    let grid = tgfield::geometry::VolumeGrid::cube(8, 1.0);
    let vol = Volume::from_data(grid, vec![0.01; grid.len()]).unwrap();
    let cfg = GaussianInitConfig { density_threshold: 0.05, ..Default::default() };
    match recon::volume_to_gaussians(&vol, &cfg) {
        Err(e @ Error::Init(_)) => {
            let msg = e.to_string();
            assert!(msg.contains("density_threshold") && msg.contains("0.05"), "{msg}");
        }
        other => panic!("expected an init error, got {other:?}"),
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (p, proj, _) = common::phantom_scan(16, 6, None);
    let wrong = Volume::zeros(tgfield::geometry::VolumeGrid::cube(8, 1.0));
    assert!(matches!(recon::sart_pass(&wrong, &p, &proj, 1.0), Err(Error::Argument(_))));
    let bad = AsdPocsConfig { art_relax: 2.5, ..Default::default() };
    assert!(matches!(recon::asd_pocs(&Volume::zeros(p.grid), &p, &proj, &bad), Err(Error::Argument(_))));
}
