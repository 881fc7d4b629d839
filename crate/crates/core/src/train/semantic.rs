//! Semantic consistency between a training view and a synthesized side view,
//! compared through descriptors of crops around projected primitive centers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::descriptor::FeatureExtractor;
use crate::geometry::DetectorFrame;
use crate::linalg::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SemConfig {
    /// Crop side length in pixels.
    pub crop: usize,
    /// Sampled primitive centers per evaluation.
    pub count: usize,
    /// Evaluate every this many iterations after warm-up.
    pub every: usize,
}

impl Default for SemConfig {
    fn default() -> Self {
        SemConfig {
            crop: 16,
            count: 64,
            every: 10,
        }
    }
}

/// Angular midpoint between `angles[view]` and the next angle of the orbit.
pub fn side_angle(angles: &[f64], view: usize) -> f64 {
    use std::f64::consts::TAU;
    let a = angles[view].rem_euclid(TAU);
    let next = angles
        .iter()
        .map(|&b| {
            let d = (b.rem_euclid(TAU) - a).rem_euclid(TAU);
            if d == 0.0 {
                TAU
            } else {
                d
            }
        })
        .fold(f64::INFINITY, f64::min);
    let gap = if next.is_finite() { next } else { TAU };
    angles[view] + gap / 2.0
}

/// Indices of up to `count` primitives with density strictly above the
/// median, drawn without replacement.
pub fn sample_dense(densities: &[f64], count: usize, seed: u64) -> Vec<usize> {
    if densities.is_empty() {
        return Vec::new();
    }
    let mut sorted = densities.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    let mut idx: Vec<usize> = (0..densities.len()).filter(|&i| densities[i] > median).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(count);
    idx
}

/// Top-left corner of the `p × p` crop centered at the pixel nearest to
/// `(u, v)`, if the crop fits inside the image.
pub fn crop_origin(u: f64, v: f64, p: usize, nu: usize, nv: usize) -> Option<(usize, usize)> {
    let cu = u.round() as i64 - (p / 2) as i64;
    let cv = v.round() as i64 - (p / 2) as i64;
    if cu < 0 || cv < 0 || cu as usize + p > nu || cv as usize + p > nv {
        return None;
    }
    Some((cu as usize, cv as usize))
}

pub fn extract_crop(image: &[f64], nu: usize, origin: (usize, usize), p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p * p);
    for y in 0..p {
        let row = (origin.1 + y) * nu + origin.0;
        out.extend_from_slice(&image[row..row + p]);
    }
    out
}

fn scatter_crop(grad: &mut [f64], nu: usize, origin: (usize, usize), p: usize, g: &[f64]) {
    for y in 0..p {
        let row = (origin.1 + y) * nu + origin.0;
        grad[row..row + p].iter_mut().zip(&g[y * p..(y + 1) * p]).for_each(|(a, b)| *a += b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemResult {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub retained: usize,
}

/// Mean squared descriptor distance between crops of `image_a` and
/// `image_b` around the projections of `centers`. Crop locations are
/// treated as constants.
pub fn semantic_loss(
    image_a: &[f64],
    frame_a: &DetectorFrame,
    image_b: &[f64],
    frame_b: &DetectorFrame,
    centers: &[Vec3],
    p: usize,
    extractor: &dyn FeatureExtractor,
) -> SemResult {
    let (nu, nv) = (frame_a.nu, frame_a.nv);
    let mut pairs = Vec::new();
    for &c in centers {
        let (Some((ua, va)), Some((ub, vb))) = (frame_a.project(c), frame_b.project(c)) else {
            continue;
        };
        let (Some(oa), Some(ob)) = (crop_origin(ua, va, p, nu, nv), crop_origin(ub, vb, p, frame_b.nu, frame_b.nv)) else {
            continue;
        };
        pairs.push((oa, ob));
    }
    let mut res = SemResult {
        value: 0.0,
        grad_a: vec![0.0; image_a.len()],
        grad_b: vec![0.0; image_b.len()],
        retained: pairs.len(),
    };
    if pairs.is_empty() {
        log::warn!("semantic loss: no crop pair fits inside both views");
        return res;
    }
    let n = pairs.len() as f64;
    for (oa, ob) in pairs {
        let ca = extract_crop(image_a, nu, oa, p);
        let cb = extract_crop(image_b, frame_b.nu, ob, p);
        let fa = extractor.extract(&ca, p);
        let fb = extractor.extract(&cb, p);
        let diff: Vec<f64> = fa.iter().zip(&fb).map(|(a, b)| a - b).collect();
        res.value += diff.iter().map(|d| d * d).sum::<f64>() / n;
        let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        scatter_crop(&mut res.grad_a, nu, oa, p, &extractor.backward(&ca, p, &g));
        scatter_crop(&mut res.grad_b, frame_b.nu, ob, p, &extractor.backward(&cb, p, &neg));
    }
    res
}
