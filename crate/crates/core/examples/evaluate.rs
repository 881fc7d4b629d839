//! Scores reconstructions against ground truth with volume PSNR and 3D SSIM.
//!
//! ```text
//! cargo run --example evaluate -- <recon.vol.json>... -- <truth.vol.json>...
//! ```
//!
//! Without arguments, compares a CGLS reconstruction of a small phantom
//! against its ground truth.

use std::path::PathBuf;

use tgfield::geometry::{PhantomSpec, ScanGeometry, VolumeGrid};
use tgfield::projector::LinearProjector;
use tgfield::recon::{self, CglsConfig};
use tgfield::train::{psnr, ssim3d};

fn main() -> tgfield::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some(split) = args.iter().position(|a| a == "--") {
        let recon: Vec<PathBuf> = args[..split].iter().map(PathBuf::from).collect();
        let truth: Vec<PathBuf> = args[split + 1..].iter().map(PathBuf::from).collect();
        let report = tgfield::cli::cmd_eval(&recon, &truth, None)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }

    let geom = ScanGeometry::circular(4.0, 6.0, (32, 32), (0.1, 0.1), 10, None)?;
    let grid = VolumeGrid::cube(24, 1.0);
    let (proj, truth) = tgfield::geometry::simulate_phantom(&PhantomSpec::shepp_logan(), &grid, &geom, Some(1e5), 0)?;
    let p = LinearProjector::new(geom, grid)?;
    for iters in [2, 5, 20] {
        let x = recon::cgls(&p, &proj, &CglsConfig { max_iters: iters, ..Default::default() })?;
        println!(
            "CGLS {iters:>2} iterations: PSNR {:.2} dB, SSIM {:.3}",
            psnr(&x, &truth[0], truth[0].max())?,
            ssim3d(&x, &truth[0])?
        );
    }
    Ok(())
}
