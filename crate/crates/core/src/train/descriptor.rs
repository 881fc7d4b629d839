//! Patch descriptors for the semantic consistency loss.

use std::f64::consts::PI;

/// Maps a `p × p` crop to a fixed-width feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn width(&self, p: usize) -> usize;
    fn extract(&self, crop: &[f64], p: usize) -> Vec<f64>;
    /// Gradient of `⟨grad_out, extract(crop)⟩` with respect to the crop.
    fn backward(&self, crop: &[f64], p: usize, grad_out: &[f64]) -> Vec<f64>;
}

/// The crop itself, flattened.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlattenedCrop;

impl FeatureExtractor for FlattenedCrop {
    fn width(&self, p: usize) -> usize {
        p * p
    }

    fn extract(&self, crop: &[f64], _: usize) -> Vec<f64> {
        crop.to_vec()
    }

    fn backward(&self, _: &[f64], _: usize, grad_out: &[f64]) -> Vec<f64> {
        grad_out.to_vec()
    }
}

const MAG_EPS: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

/// Soft orientation histograms of forward-difference gradients, over the
/// whole crop and over each cell of a `cells × cells` partition. Every
/// histogram is L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct GradientHistogram {
    pub bins: usize,
    pub cells: usize,
}

impl Default for GradientHistogram {
    fn default() -> Self {
        GradientHistogram { bins: 8, cells: 2 }
    }
}

struct PixelTerm {
    /// Histograms receiving this pixel: the global one and its cell.
    hists: [usize; 2],
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
    gx: f64,
    gy: f64,
    mag: f64,
}

impl GradientHistogram {
    fn n_hists(&self) -> usize {
        1 + self.cells * self.cells
    }

    fn terms(&self, crop: &[f64], p: usize) -> Vec<PixelTerm> {
        let b = self.bins as f64;
        let mut out = Vec::with_capacity(p * p);
        for y in 0..p.saturating_sub(1) {
            for x in 0..p - 1 {
                let c = crop[y * p + x];
                let gx = crop[y * p + x + 1] - c;
                let gy = crop[(y + 1) * p + x] - c;
                let mag = (gx * gx + gy * gy + MAG_EPS).sqrt();
                let theta = gy.atan2(gx);
                let pos = (theta + PI) / (2.0 * PI) * b - 0.5;
                let f = pos.floor();
                let frac = pos - f;
                let lo = (f as i64).rem_euclid(self.bins as i64) as usize;
                let cell = (y * self.cells / (p - 1)) * self.cells + x * self.cells / (p - 1);
                out.push(PixelTerm {
                    hists: [0, 1 + cell],
                    lo,
                    hi: (lo + 1) % self.bins,
                    w_lo: 1.0 - frac,
                    w_hi: frac,
                    gx,
                    gy,
                    mag,
                });
            }
        }
        out
    }

    fn raw(&self, terms: &[PixelTerm]) -> Vec<f64> {
        let mut h = vec![0.0; self.n_hists() * self.bins];
        for t in terms {
            for &k in &t.hists {
                h[k * self.bins + t.lo] += t.mag * t.w_lo;
                h[k * self.bins + t.hi] += t.mag * t.w_hi;
            }
        }
        h
    }
}

impl FeatureExtractor for GradientHistogram {
    fn width(&self, _: usize) -> usize {
        self.n_hists() * self.bins
    }

    fn extract(&self, crop: &[f64], p: usize) -> Vec<f64> {
        let mut h = self.raw(&self.terms(crop, p));
        for chunk in h.chunks_mut(self.bins) {
            let s = (chunk.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
            chunk.iter_mut().for_each(|v| *v /= s);
        }
        h
    }

    fn backward(&self, crop: &[f64], p: usize, grad_out: &[f64]) -> Vec<f64> {
        let terms = self.terms(crop, p);
        let h = self.raw(&terms);
        let mut dh = vec![0.0; h.len()];
        for (k, chunk) in h.chunks(self.bins).enumerate() {
            let g = &grad_out[k * self.bins..(k + 1) * self.bins];
            let s2 = chunk.iter().map(|v| v * v).sum::<f64>() + NORM_EPS;
            let s = s2.sqrt();
            let hg: f64 = chunk.iter().zip(g).map(|(a, b)| a * b).sum();
            for i in 0..self.bins {
                dh[k * self.bins + i] = g[i] / s - chunk[i] * hg / (s2 * s);
            }
        }
        let slope = self.bins as f64 / (2.0 * PI);
        let mut dcrop = vec![0.0; crop.len()];
        let mut idx = 0;
        for y in 0..p.saturating_sub(1) {
            for x in 0..p - 1 {
                let t = &terms[idx];
                idx += 1;
                let (mut d_mag, mut d_theta) = (0.0, 0.0);
                for &k in &t.hists {
                    let (a, b) = (dh[k * self.bins + t.lo], dh[k * self.bins + t.hi]);
                    d_mag += a * t.w_lo + b * t.w_hi;
                    d_theta += t.mag * slope * (b - a);
                }
                let r2 = t.gx * t.gx + t.gy * t.gy;
                let mut dgx = d_mag * t.gx / t.mag;
                let mut dgy = d_mag * t.gy / t.mag;
                if r2 > 0.0 {
                    dgx += d_theta * (-t.gy / r2);
                    dgy += d_theta * (t.gx / r2);
                }
                let c = y * p + x;
                dcrop[c + 1] += dgx;
                dcrop[c + p] += dgy;
                dcrop[c] -= dgx + dgy;
            }
        }
        dcrop
    }
}
