//! Sparse-view CGLS followed by ASD-POCS refinement, then sampling an
//! initial Gaussian point cloud from the refined volume.

use tgfield::geometry::{PhantomSpec, ScanGeometry, VolumeGrid};
use tgfield::projector::LinearProjector;
use tgfield::recon::{self, AsdPocsConfig, CglsConfig, GaussianInitConfig};
use tgfield::train::psnr;

fn main() -> tgfield::Result<()> {
    let geom = ScanGeometry::circular(4.0, 6.0, (48, 48), (0.07, 0.07), 10, None)?;
    let grid = VolumeGrid::cube(32, 1.0);
    let (proj, truth) = tgfield::geometry::simulate_phantom(&PhantomSpec::shepp_logan(), &grid, &geom, Some(1e5), 0)?;
    let truth = &truth[0];
    let p = LinearProjector::new(geom, grid)?;

    let (cg, report) = recon::cgls_with_report(&p, &proj, &CglsConfig::default())?;
    println!(
        "CGLS: {} iterations, residual {:.4} -> {:.4}, PSNR {:.2} dB",
        report.iterations,
        report.residual_norms[0],
        report.residual_norms.last().unwrap(),
        psnr(&cg, truth, truth.max())?
    );
    let refined = recon::asd_pocs(&cg, &p, &proj, &AsdPocsConfig::default())?;
    println!("ASD-POCS: PSNR {:.2} dB", psnr(&refined, truth, truth.max())?);

    let set = recon::volume_to_gaussians(&refined, &GaussianInitConfig { n_points: 2000, ..Default::default() })?;
    let mean_density = set.primitives.iter().map(|g| g.density()).sum::<f64>() / set.len() as f64;
    println!("{} initial Gaussians, mean density {mean_density:.3}", set.len());
    Ok(())
}
