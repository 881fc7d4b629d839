//! Renders a handful of anisotropic Gaussians at several gantry angles and
//! writes the projections as PNGs.
//!
//! ```text
//! cargo run --example render -- [out_dir]
//! ```

use std::path::PathBuf;

use tgfield::geometry::ScanGeometry;
use tgfield::gsplat::{GaussianPrimitive, Renderer};

fn main() -> tgfield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example_render".into()));
    std::fs::create_dir_all(&out).map_err(|e| tgfield::Error::Io { path: out.clone(), source: e })?;
    let geom = ScanGeometry::circular(4.0, 6.0, (96, 96), (0.04, 0.04), 4, None)?;
    let mut prims = vec![
        GaussianPrimitive::isotropic([0.0, 0.0, 0.0], 0.25, 1.0),
        GaussianPrimitive::isotropic([0.4, 0.2, -0.3], 0.1, 2.0),
    ];
    let mut elongated = GaussianPrimitive::isotropic([-0.4, -0.3, 0.2], 1.0, 1.5);
    elongated.log_scale = [(0.35f64).ln(), (0.06f64).ln(), (0.1f64).ln()];
    elongated.quat = [0.924, 0.0, 0.0, 0.383];
    prims.push(elongated);

    let renderer = Renderer::default();
    for (k, &angle) in geom.angles.iter().enumerate() {
        let img = renderer.render(&prims, &geom, angle).image;
        let max = img.iter().cloned().fold(0.0, f64::max);
        let path = out.join(format!("view{k}.png"));
        tgfield::io::write_png(&path, &img, geom.nu, geom.nv, max)?;
        println!("{:6.1} deg  peak {max:.3}  {}", angle.to_degrees(), path.display());
    }
    Ok(())
}
