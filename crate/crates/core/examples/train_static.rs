//! Static sparse-view pipeline on the Shepp-Logan phantom: simulate,
//! initialize, train with the deformation field after warm-up, evaluate.
//!
//! ```text
//! cargo run --release --example train_static -- [out_dir] [iterations]
//! ```

use std::path::PathBuf;

use tgfield::cli::{self, ExperimentConfig};

fn main() -> tgfield::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example_static".into()));
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);

    let mut cfg = ExperimentConfig::static_phantom();
    cfg.geometry.grid = tgfield::geometry::VolumeGrid::cube(32, 1.0);
    cfg.geometry.scan.nu = 48;
    cfg.geometry.scan.nv = 48;
    cfg.geometry.scan.du = 0.07;
    cfg.geometry.scan.dv = 0.07;
    cfg.init.gaussians.n_points = 4000;
    cfg.model.head_hidden = 32;
    cfg.model.hash.table_size_log2 = 14;
    cfg.train.schedule.total_iters = iters;
    cfg.train.schedule.warmup_iters = iters / 5;
    cfg.train.weights.lambda_sem = 1e-3;
    cfg.train.tv_patch = 16;
    cfg.train.eval_every = (iters / 4).max(1);

    let sim = cli::cmd_simulate(&cfg, &out.join("sim"))?;
    let init = cli::cmd_init(&cfg, &sim.projections, &out.join("init"), None)?;
    println!(
        "init: CGLS {:.2} dB, ASD-POCS {:.2} dB, {} Gaussians",
        init.report.cgls_psnr.unwrap_or(f64::NAN),
        init.report.init_psnr.unwrap_or(f64::NAN),
        init.report.n_gaussians
    );
    let run = cli::cmd_train(&cfg, &init.gaussians, &sim.projections, &out.join("train"), None)?;
    println!(
        "trained {} iterations: PSNR {:.2} dB, SSIM {:.3}; checkpoint {}",
        run.summary.iterations,
        run.summary.mean_psnr.unwrap_or(f64::NAN),
        run.summary.mean_ssim.unwrap_or(f64::NAN),
        run.checkpoint.display()
    );
    Ok(())
}
