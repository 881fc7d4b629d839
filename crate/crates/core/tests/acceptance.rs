//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{gradient_suite, quadrature_integral, random_primitive, ray_near, rng, uniform, FdStats};
use tgfield::cli::{self, ExperimentConfig, RunOptions};
use tgfield::geometry::{ProjectionSet, ScanGeometry, Volume, VolumeGrid};
use tgfield::io;
use tgfield::neural::ParamGroup;
use tgfield::projector::LinearProjector;
use tgfield::recon::{self, AsdPocsConfig, CglsConfig};
use tgfield::train::losses::{self, psnr, Image};
use tgfield::train::semantic;
use tgfield::train::descriptor::GradientHistogram;
use tgfield::train::{self, total_loss, LossTerms, LossWeights, OptimSchedule, TrainConfig, TrainData, TrainMode, Trainer};
use tgfield::tv::TV_EPS;

type Check = Box<dyn Fn() -> Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adjoint() -> Outcome {
    let geom = ScanGeometry::circular(4.0, 6.0, (32, 32), (0.1, 0.1), 8, None).unwrap();
    let grid = VolumeGrid::cube(16, 1.0);
    let p = LinearProjector::new(geom.clone(), grid).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(1000 + seed);
        let x = Volume::from_data(grid, (0..grid.len()).map(|_| uniform(&mut r, -1.0, 1.0)).collect()).unwrap();
        let mut y = ProjectionSet::zeros(geom.clone());
        y.data.iter_mut().for_each(|v| *v = uniform(&mut r, -1.0, 1.0));
        let ax = p.forward(&x).unwrap();
        let aty = p.adjoint(&y).unwrap();
        let rel = (dot(&ax.data, &y.data) - dot(&x.data, &aty.data)).abs() / (dot(&ax.data, &ax.data) * dot(&y.data, &y.data)).sqrt();
        worst = worst.max(rel);
    }
    outcome(worst <= 1e-5, format!("worst relative mismatch {worst:.2e} over 20 seeds (limit 1e-5)"))
}

fn quadrature() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = random_primitive(&mut r);
        let ray = ray_near(&mut r, &g, 0.15);
        let closed = tgfield::gsplat::ray_integral_with_cull(&g, &ray, f64::INFINITY).unwrap();
        let quad = quadrature_integral(&g, &ray);
        worst = worst.max((closed - quad).abs() / quad.abs());
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} over 100 pairs (limit 1e-6)"))
}

fn gradients() -> Outcome {
    let mut total = FdStats::default();
    let mut parts = Vec::new();
    for (name, st) in gradient_suite(0) {
        parts.push(format!("{name} {}/{}", st.passed, st.total));
        total.merge(st);
    }
    let frac = total.fraction();
    outcome(frac >= 0.99, format!("{:.2}% of {} entries within 1e-3 ({})", 100.0 * frac, total.total, parts.join(", ")))
}

fn identity_at_init() -> Outcome {
    let mut changed = Vec::new();
    let cases = [
        (common::small_geometry(4, 16), TrainMode::Static),
        (
            ScanGeometry::circular(4.0, 6.0, (16, 16), (0.15, 0.15), 8, Some(4)).unwrap(),
            TrainMode::Dynamic { n_phases: 4 },
        ),
    ];
    let mut views = 0;
    for (geom, mode) in cases {
        let grid = VolumeGrid::cube(8, 0.6);
        let proj = ProjectionSet::zeros(geom.clone());
        let set = common::random_set(&mut rng(7), 25);
        let cfg = TrainConfig { field: common::small_field_config(), ..Default::default() };
        let data = TrainData { proj: &proj, grid, truth: &[] };
        let mut t = Trainer::new(data, &set, cfg, mode).unwrap();
        let before: Vec<Vec<f64>> = (0..geom.n_views()).map(|v| t.render_view(v).unwrap()).collect();
        t.attach_field().unwrap();
        for (v, img) in before.iter().enumerate() {
            let after = t.render_view(v).unwrap();
            views += 1;
            if !img.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()) {
                changed.push(format!("{mode:?} view {v}"));
            }
        }
    }
    let mut detail = format!("{} of {views} views bit-identical", views - changed.len());
    if !changed.is_empty() {
        detail += &format!(", changed: {}", changed.join(", "));
    }
    outcome(changed.is_empty(), detail)
}

fn classic_recon() -> Outcome {
    let (p, proj, truth) = common::phantom_scan(32, 10, Some(1e5));
    let (cg, res) = recon::cgls_with_report(&p, &proj, &CglsConfig::default()).unwrap();
    let cgls_mono = res.residual_norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let (x, report) = recon::asd_pocs_with_report(&cg, &p, &proj, &AsdPocsConfig::default()).unwrap();
    let tv_mono = report.tv_phases.iter().all(|ph| ph.windows(2).all(|w| w[1] <= w[0]));
    let range = truth.max();
    let before = psnr(&cg, &truth, range).unwrap();
    let after = psnr(&x, &truth, range).unwrap();
    let margin = after - before;
    outcome(
        cgls_mono && tv_mono && margin > 0.0,
        format!(
            "CGLS residual monotone {cgls_mono} ({} iters), TV monotone in all {} phases {tv_mono}, ASD-POCS {after:.2} dB vs CGLS {before:.2} dB (margin {margin:+.2} dB)",
            res.iterations,
            report.tv_phases.len()
        ),
    )
}

/// Simulates and initializes `cfg` under `dir`; returns the projections, the
/// initial Gaussians, the ground truth and the refined-volume PSNR.
fn prepare(cfg: &ExperimentConfig, dir: &Path) -> (ProjectionSet, tgfield::gsplat::GaussianSet, Vec<Volume>, f64) {
    let sim = cli::cmd_simulate(cfg, &dir.join("sim")).unwrap();
    let init = cli::cmd_init(cfg, &sim.projections, &dir.join("init"), None).unwrap();
    let proj = io::read_projections(&sim.projections).unwrap();
    let gs = io::read_gaussians(&init.gaussians).unwrap();
    let truth: Vec<Volume> = sim.truth.iter().map(|t| io::read_volume(t).unwrap()).collect();
    (proj, gs, truth, init.report.init_psnr.unwrap())
}

fn run(cfg: &ExperimentConfig, proj: &ProjectionSet, gs: &tgfield::gsplat::GaussianSet, truth: &[Volume], dynamic: bool) -> f64 {
    let data = TrainData { proj, grid: cfg.geometry.grid, truth };
    let tcfg = cfg.train_config();
    let out = if dynamic {
        train::train_dynamic(data, gs, &tcfg, None).unwrap()
    } else {
        train::train_static(data, gs, &tcfg, None).unwrap()
    };
    out.evaluation.mean_psnr().unwrap()
}

/// The static 64³ experiment scaled to 6000 iterations.
fn static_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::static_phantom();
    c.model.head_hidden = 32;
    c.model.hash.table_size_log2 = 14;
    c.train.schedule.total_iters = 6000;
    c.train.schedule.warmup_iters = 1000;
    c.train.weights.lambda_sem = 1e-3;
    c.train.eval_every = 0;
    c
}

fn end_to_end_static(dir: &Path) -> Outcome {
    let cfg = static_config();
    let (proj, gs, truth, init_psnr) = prepare(&cfg, dir);
    let full = run(&cfg, &proj, &gs, &truth, false);
    let mut warm_only = cfg.clone();
    warm_only.train.schedule.warmup_iters = warm_only.train.schedule.total_iters;
    let baseline = run(&warm_only, &proj, &gs, &truth, false);
    outcome(
        full >= init_psnr + 0.5 && full >= baseline + 0.2,
        format!(
            "final {full:.2} dB, initialization {init_psnr:.2} dB (needs +0.5), warm-up only {baseline:.2} dB (needs +0.2)"
        ),
    )
}

/// The 48³ breathing experiment on a shortened schedule.
fn dynamic_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::breathing_phantom();
    c.init.gaussians.n_points = 6000;
    c.model.head_hidden = 32;
    c.model.hash.table_size_log2 = 14;
    c.model.stab_window = Some(3);
    c.model.flow_hidden = 32;
    c.train.schedule.total_iters = 3000;
    c.train.schedule.warmup_iters = 600;
    c.train.weights.lambda_sem = 1e-3;
    c.train.eval_every = 0;
    c
}

fn end_to_end_dynamic(dir: &Path) -> Outcome {
    let cfg = dynamic_config();
    let (proj, gs, truth, _) = prepare(&cfg, dir);
    let pooled = run(&cfg, &proj, &gs, &truth, false);
    let mut he = cfg.clone();
    he.model.stab = false;
    he.model.flow = false;
    let he = run(&he, &proj, &gs, &truth, true);
    let mut he_stab = cfg.clone();
    he_stab.model.flow = false;
    let he_stab = run(&he_stab, &proj, &gs, &truth, true);
    let full = run(&cfg, &proj, &gs, &truth, true);
    outcome(
        full >= pooled + 1.0 && he < he_stab && he_stab < full,
        format!(
            "HE+STAB+MF {full:.2} dB vs static pooled {pooled:.2} dB (needs +1.0); HE {he:.2} < HE+STAB {he_stab:.2} < HE+STAB+MF {full:.2}"
        ),
    )
}

fn loss_identities() -> Outcome {
    let (w, h) = (20, 16);
    let mut r = rng(1);
    let x: Vec<f64> = (0..w * h).map(|_| uniform(&mut r, 0.0, 1.0)).collect();
    let img = Image::new(&x, w, h).unwrap();
    let dssim = losses::loss_dssim(&img, &img).unwrap();
    let tv = losses::loss_tv3d(&vec![0.37; 512], [8, 8, 8]).unwrap();
    let geom = common::small_geometry(4, 24);
    let frame = tgfield::geometry::DetectorFrame::new(&geom, 0.3);
    let centers = vec![[0.0, 0.0, 0.0], [0.1, -0.05, 0.08], [-0.1, 0.1, 0.0]];
    let image: Vec<f64> = (0..24 * 24).map(|_| uniform(&mut r, 0.0, 1.0)).collect();
    let sem = semantic::semantic_loss(&image, &frame, &image, &frame, &centers, 8, &GradientHistogram::default()).value;
    let terms = LossTerms { l1: 1.0, dssim: 0.2, tv: 0.4, sem: 0.3 };
    let weights = LossWeights::default();
    let total = total_loss(&terms, &weights);
    let total_err = (total - 1.10).abs();
    let ok = dssim == 0.0
        && tv <= TV_EPS.sqrt() * (1.0 + 1e-12)
        && sem == 0.0
        && weights == (LossWeights { lambda_ssim: 0.25, lambda_tv: 0.05, lambda_sem: 0.1 })
        && total_err <= 1e-9;
    outcome(
        ok,
        format!("D-SSIM(x,x) {dssim:e}, TV(const) {tv:.1e} (limit {:.1e}), sem(same) {sem:e}, total {total:.12} vs 1.10", TV_EPS.sqrt()),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::smoke(true);
    cfg.apply(&RunOptions { seed: Some(7), deterministic: true });
    let sim = cli::cmd_simulate(&cfg, &dir.join("sim")).unwrap();
    let init = cli::cmd_init(&cfg, &sim.projections, &dir.join("init"), None).unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|n| cli::cmd_train(&cfg, &init.gaussians, &sim.projections, &dir.join(n), None).unwrap())
        .collect();
    let same = |f: fn(&cli::TrainRunOutput) -> &PathBuf| std::fs::read(f(&runs[0])).unwrap() == std::fs::read(f(&runs[1])).unwrap();
    let csv = same(|r| &r.metrics);
    let ckpt = same(|r| &r.checkpoint);
    outcome(csv && ckpt, format!("metrics CSV identical {csv}, checkpoint identical {ckpt}"))
}

fn schedule() -> Outcome {
    let s = OptimSchedule::default();
    let groups = [
        ParamGroup::Position,
        ParamGroup::Density,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Hash,
        ParamGroup::Decoder,
    ];
    let worst = groups.iter().map(|&g| (s.lr_at(g, 30000) - 0.1 * s.lr.get(g)).abs()).fold(0.0, f64::max);
    outcome(
        s.total_iters == 30000 && worst <= 1e-9,
        format!("worst |lr(30000) - 0.1 lr0| {worst:.1e} over 6 groups"),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Check)> = vec![
        ("adjoint", Box::new(adjoint)),
        ("ray integral quadrature", Box::new(quadrature)),
        ("gradient suite", Box::new(gradients)),
        ("identity at initialization", Box::new(identity_at_init)),
        ("classic reconstruction", Box::new(classic_recon)),
        ("end-to-end static", Box::new({
            let d = root.join("static");
            move || end_to_end_static(&d)
        })),
        ("end-to-end dynamic", Box::new({
            let d = root.join("dynamic");
            move || end_to_end_dynamic(&d)
        })),
        ("loss identities", Box::new(loss_identities)),
        ("determinism", Box::new({
            let d = root.join("determinism");
            move || determinism(&d)
        })),
        ("schedule", Box::new(schedule)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
