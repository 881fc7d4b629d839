//! Image and volume losses with analytic gradients, and quality metrics.

use crate::error::{Error, Result};
use crate::geometry::Volume;
use crate::tv::{self, TV_EPS};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const PSNR_CAP: f64 = 100.0;

/// A `width × height` image, row-major with `x` fastest.
#[derive(Debug, Clone, Copy)]
pub struct Image<'a> {
    pub data: &'a [f64],
    pub width: usize,
    pub height: usize,
}

impl<'a> Image<'a> {
    pub fn new(data: &'a [f64], width: usize, height: usize) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "image buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Image { data, width, height })
    }
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::arg(format!(
            "image dims differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn loss_l1(pred: &Image, target: &Image) -> Result<f64> {
    Ok(loss_l1_grad(pred, target)?.0)
}

pub fn loss_l1_grad(pred: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    same_dims(pred, target)?;
    let n = pred.data.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(target.data)
        .map(|(p, t)| {
            let d = p - t;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

/// Normalized `11 × 11` Gaussian window with `σ = 1.5`.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            w[y * SSIM_WINDOW + x] = g[y] * g[x];
        }
    }
    w
}

struct SsimMaps {
    value: f64,
    /// Per-window partial derivatives w.r.t. `μx`, `E[x²]` and `E[xy]`,
    /// already divided by the window count.
    d_mu: Vec<f64>,
    d_xx: Vec<f64>,
    d_xy: Vec<f64>,
    ow: usize,
    oh: usize,
}

fn ssim_maps(x: &Image, y: &Image, data_range: f64, want_grad: bool) -> Result<SsimMaps> {
    same_dims(x, y)?;
    if x.width < SSIM_WINDOW || x.height < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            x.width, x.height
        )));
    }
    let w = gaussian_window();
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let (ow, oh) = (x.width - SSIM_WINDOW + 1, x.height - SSIM_WINDOW + 1);
    let m = (ow * oh) as f64;
    let mut total = 0.0;
    let n = if want_grad { ow * oh } else { 0 };
    let (mut d_mu, mut d_xx, mut d_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let k = w[wy * SSIM_WINDOW + wx];
                    let p = (oy + wy) * x.width + ox + wx;
                    let (a, b) = (x.data[p], y.data[p]);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * (sxy - mx * my) + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = (sxx - mx * mx) + (syy - my * my) + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let i = oy * ow + ox;
                d_mu[i] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2) / m;
                d_xx[i] = -s / b2 / m;
                d_xy[i] = 2.0 * s / a2 / m;
            }
        }
    }
    Ok(SsimMaps {
        value: total / m,
        d_mu,
        d_xx,
        d_xy,
        ow,
        oh,
    })
}

fn data_range(target: &Image) -> f64 {
    let r = target.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Mean SSIM over all valid window positions; stability constants use the
/// given data range.
pub fn ssim(x: &Image, y: &Image, data_range: f64) -> Result<f64> {
    Ok(ssim_maps(x, y, data_range, false)?.value)
}

/// SSIM and its gradient with respect to `x`.
pub fn ssim_grad(x: &Image, y: &Image, data_range: f64) -> Result<(f64, Vec<f64>)> {
    let maps = ssim_maps(x, y, data_range, true)?;
    let w = gaussian_window();
    let mut grad = vec![0.0; x.data.len()];
    for oy in 0..maps.oh {
        for ox in 0..maps.ow {
            let i = oy * maps.ow + ox;
            let (a, b, c) = (maps.d_mu[i], maps.d_xx[i], maps.d_xy[i]);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let k = w[wy * SSIM_WINDOW + wx];
                    let p = (oy + wy) * x.width + ox + wx;
                    grad[p] += k * (a + 2.0 * b * x.data[p] + c * y.data[p]);
                }
            }
        }
    }
    Ok((maps.value, grad))
}

/// `(1 − SSIM)/2`, with the data range taken as the maximum of `target`.
pub fn loss_dssim(pred: &Image, target: &Image) -> Result<f64> {
    Ok((1.0 - ssim(pred, target, data_range(target))?) / 2.0)
}

pub fn loss_dssim_grad(pred: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_grad(pred, target, data_range(target))?;
    Ok(((1.0 - s) / 2.0, g.into_iter().map(|v| -0.5 * v).collect()))
}

/// Mean over voxels of the smoothed isotropic total variation.
pub fn loss_tv3d(data: &[f64], dims: [usize; 3]) -> Result<f64> {
    Ok(loss_tv3d_grad(data, dims)?.0)
}

pub fn loss_tv3d_grad(data: &[f64], dims: [usize; 3]) -> Result<(f64, Vec<f64>)> {
    let n = dims[0] * dims[1] * dims[2];
    if data.len() != n || n == 0 {
        return Err(Error::arg("tv patch does not match its dims"));
    }
    let (v, g) = tv::total_variation_grad(data, dims, TV_EPS);
    let inv = 1.0 / n as f64;
    Ok((v * inv, g.into_iter().map(|x| x * inv).collect()))
}

fn same_grid(a: &Volume, b: &Volume) -> Result<()> {
    if a.grid.dims != b.grid.dims || a.data.len() != b.data.len() {
        return Err(Error::arg(format!(
            "volume grids differ: {:?} vs {:?}",
            a.grid.dims, b.grid.dims
        )));
    }
    Ok(())
}

/// `10·log10(range²/MSE)`, capped at 100 dB.
pub fn psnr(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    same_grid(a, b)?;
    if !(data_range > 0.0) {
        return Err(Error::arg("psnr data range must be positive"));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    let r2 = data_range * data_range;
    if mse < 1e-10 * r2 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (r2 / mse).log10()).min(PSNR_CAP))
}

/// Mean 2D SSIM over axial slices, data range from the maximum of `b`.
pub fn ssim3d(a: &Volume, b: &Volume) -> Result<f64> {
    same_grid(a, b)?;
    let [nx, ny, nz] = a.grid.dims;
    let range = {
        let m = b.max();
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let mut total = 0.0;
    for k in 0..nz {
        let (sa, sb) = (a.axial_slice(k), b.axial_slice(k));
        total += ssim(&Image::new(&sa, nx, ny)?, &Image::new(&sb, nx, ny)?, range)?;
    }
    Ok(total / nz as f64)
}
