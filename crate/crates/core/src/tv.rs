//! Smoothed isotropic total variation over forward differences.
//!
//! Each voxel contributes `sqrt(dx² + dy² + dz² + eps)`; differences that would
//! leave the lattice are zero.

use rayon::prelude::*;

pub const TV_EPS: f64 = 1e-8;

#[inline]
fn diffs(data: &[f64], dims: [usize; 3], i: usize, j: usize, k: usize) -> [f64; 3] {
    let [nx, ny, nz] = dims;
    let p = i + nx * (j + ny * k);
    let x = data[p];
    [
        if i + 1 < nx { data[p + 1] - x } else { 0.0 },
        if j + 1 < ny { data[p + nx] - x } else { 0.0 },
        if k + 1 < nz { data[p + nx * ny] - x } else { 0.0 },
    ]
}

/// Sum of per-voxel smoothed gradient magnitudes.
pub fn total_variation(data: &[f64], dims: [usize; 3], eps: f64) -> f64 {
    let [nx, ny, nz] = dims;
    (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut s = 0.0;
            for j in 0..ny {
                for i in 0..nx {
                    let d = diffs(data, dims, i, j, k);
                    s += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps).sqrt();
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Value and gradient of [`total_variation`].
pub fn total_variation_grad(data: &[f64], dims: [usize; 3], eps: f64) -> (f64, Vec<f64>) {
    let [nx, ny, nz] = dims;
    let mut grad = vec![0.0; data.len()];
    let mut value = 0.0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = i + nx * (j + ny * k);
                let d = diffs(data, dims, i, j, k);
                let s = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps).sqrt();
                value += s;
                if i + 1 < nx {
                    grad[p + 1] += d[0] / s;
                    grad[p] -= d[0] / s;
                }
                if j + 1 < ny {
                    grad[p + nx] += d[1] / s;
                    grad[p] -= d[1] / s;
                }
                if k + 1 < nz {
                    grad[p + nx * ny] += d[2] / s;
                    grad[p] -= d[2] / s;
                }
            }
        }
    }
    (value, grad)
}
