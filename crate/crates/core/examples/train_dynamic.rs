//! Phase-resolved training on the breathing phantom with the 4D hash grid,
//! spatiotemporal attention and the motion-flow network.
//!
//! ```text
//! cargo run --release --example train_dynamic -- [out_dir] [iterations]
//! ```

use std::path::PathBuf;

use tgfield::cli::{self, ExperimentConfig};
use tgfield::geometry::VolumeGrid;

fn main() -> tgfield::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example_dynamic".into()));
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);

    let mut cfg = ExperimentConfig::breathing_phantom();
    cfg.geometry.grid = VolumeGrid::cube(32, 1.0);
    cfg.geometry.scan.nu = 40;
    cfg.geometry.scan.nv = 40;
    cfg.geometry.scan.du = 0.085;
    cfg.geometry.scan.dv = 0.085;
    cfg.geometry.scan.n_views = 40;
    cfg.geometry.scan.n_phases = Some(4);
    cfg.init.gaussians.n_points = 3000;
    cfg.model.head_hidden = 32;
    cfg.model.flow_hidden = 32;
    cfg.model.hash.table_size_log2 = 14;
    cfg.train.schedule.total_iters = iters;
    cfg.train.schedule.warmup_iters = iters / 5;
    cfg.train.weights.lambda_sem = 1e-3;
    cfg.train.tv_patch = 16;
    cfg.train.eval_every = (iters / 4).max(1);

    let sim = cli::cmd_simulate(&cfg, &out.join("sim"))?;
    let init = cli::cmd_init(&cfg, &sim.projections, &out.join("init"), None)?;
    let run = cli::cmd_train(&cfg, &init.gaussians, &sim.projections, &out.join("train"), None)?;
    for (phase, (p, s)) in run.summary.psnr.iter().zip(&run.summary.ssim).enumerate() {
        println!("phase {phase}: PSNR {p:.2} dB, SSIM {s:.3}");
    }
    println!("mean PSNR {:.2} dB", run.summary.mean_psnr.unwrap_or(f64::NAN));
    Ok(())
}
