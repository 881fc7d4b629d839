//! Forward-projects a phantom with the ray-driven projector and checks that
//! the backprojector is its exact transpose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgfield::geometry::{PhantomSpec, ProjectionSet, ScanGeometry, Volume, VolumeGrid};
use tgfield::projector::LinearProjector;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> tgfield::Result<()> {
    let geom = ScanGeometry::circular(4.0, 6.0, (48, 48), (0.07, 0.07), 12, None)?;
    let grid = VolumeGrid::cube(32, 1.0);
    let p = LinearProjector::new(geom.clone(), grid)?;

    let spec = PhantomSpec::shepp_logan();
    let (sino, truth) = tgfield::geometry::simulate_phantom(&spec, &grid, &geom, None, 0)?;
    let reprojected = p.forward(&truth[0])?;
    let diff = reprojected.data.iter().zip(&sino.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("noise-free scan vs reprojected truth: max difference {diff:.2e}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Volume::from_data(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut y = ProjectionSet::zeros(geom);
    y.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let ax = p.forward(&x)?;
    let aty = p.adjoint(&y)?;
    let lhs = dot(&ax.data, &y.data);
    let rhs = dot(&x.data, &aty.data);
    println!("<Ax,y> = {lhs:.9}  <x,A^T y> = {rhs:.9}  relative gap {:.2e}", (lhs - rhs).abs() / lhs.abs());
    Ok(())
}
