//! Simulates noisy cone-beam projections of the breathing phantom and
//! writes them, with the per-phase ground truth, to a directory.
//!
//! ```text
//! cargo run --release --example simulate -- [out_dir]
//! ```

use std::path::PathBuf;

use tgfield::cli::{self, ExperimentConfig};

fn main() -> tgfield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example_sim".into()));
    let mut cfg = ExperimentConfig::breathing_phantom();
    cfg.geometry.scan.n_views = 20;
    cfg.geometry.scan.n_phases = Some(4);
    let sim = cli::cmd_simulate(&cfg, &out)?;
    let proj = tgfield::io::read_projections(&sim.projections)?;
    let peak = proj.data.iter().cloned().fold(0.0, f64::max);
    println!("{} views of {}x{} pixels, peak line integral {peak:.3}", proj.geom.n_views(), proj.geom.nu, proj.geom.nv);
    for (k, t) in sim.truth.iter().enumerate() {
        println!("phase {k}: {}", t.display());
    }
    Ok(())
}
