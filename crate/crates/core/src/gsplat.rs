//! Radiative Gaussian field: primitives, covariance, closed-form ray integrals
//! with analytic gradients, projection rendering and voxelization.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DetectorFrame, Ray, ScanGeometry, Volume, VolumeGrid};
use crate::linalg::{self, Mat3, Quat, Vec3};

/// Rays farther than this Mahalanobis radius from a primitive skip it.
pub const DEFAULT_CULL: f64 = 3.0;
/// Primitives whose covariance condition number exceeds this are skipped.
pub const MAX_CONDITION: f64 = 1e12;
/// Voxelization evaluates each primitive inside its 3σ box only.
pub const VOXELIZE_SIGMAS: f64 = 3.0;
const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Vec3,
    pub quat: Quat,
    pub log_scale: Vec3,
    /// Pre-activation density; the rendered density is `softplus(rho_raw)`.
    pub rho_raw: f64,
}

impl GaussianPrimitive {
    pub fn isotropic(mu: Vec3, sigma: f64, density: f64) -> Self {
        GaussianPrimitive {
            mu,
            quat: linalg::IDENTITY_QUAT,
            log_scale: [sigma.ln(); 3],
            rho_raw: linalg::softplus_inv(density),
        }
    }

    pub fn density(&self) -> f64 {
        linalg::softplus(self.rho_raw)
    }

    pub fn covariance(&self) -> Mat3 {
        covariance(self.quat, self.log_scale)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    pub primitives: Vec<GaussianPrimitive>,
}

impl GaussianSet {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        GaussianSet { primitives }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn concat(&self, other: &GaussianSet) -> GaussianSet {
        let mut p = self.primitives.clone();
        p.extend_from_slice(&other.primitives);
        GaussianSet { primitives: p }
    }
}

/// Bounds on `log_scale`, expressed as multiples of the voxel spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBounds {
    pub min_log: f64,
    pub max_log: f64,
}

impl ScaleBounds {
    pub fn for_grid(grid: &VolumeGrid) -> Self {
        let s = grid.min_spacing();
        ScaleBounds {
            min_log: (0.1 * s).ln(),
            max_log: (10.0 * s).ln(),
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min_log, self.max_log)
    }
}

/// `Σ = R · diag(exp(2·log_scale)) · Rᵀ`. The quaternion is renormalized.
pub fn covariance(quat: Quat, log_scale: Vec3) -> Mat3 {
    let r = linalg::quat_to_mat(linalg::quat_normalize(quat));
    linalg::rotate_diag(
        &r,
        [
            (2.0 * log_scale[0]).exp(),
            (2.0 * log_scale[1]).exp(),
            (2.0 * log_scale[2]).exp(),
        ],
    )
}

/// Per-primitive quantities shared by every ray.
#[derive(Debug, Clone, Copy)]
pub struct Prepared {
    pub mu: Vec3,
    pub unit_quat: Quat,
    pub raw_quat: Quat,
    pub rot: Mat3,
    /// `exp(-2·log_scale)`, the eigenvalues of the precision matrix.
    pub inv_var: Vec3,
    pub precision: Mat3,
    pub covariance: Mat3,
    pub rho: f64,
    pub rho_raw: f64,
}

impl Prepared {
    pub fn new(g: &GaussianPrimitive) -> Result<Self> {
        let ls = g.log_scale;
        let spread = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - ls.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = (2.0 * spread).exp();
        if !(cond <= MAX_CONDITION) || !g.mu.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "degenerate covariance (condition number {cond:.3e})"
            )));
        }
        let unit_quat = linalg::quat_normalize(g.quat);
        let rot = linalg::quat_to_mat(unit_quat);
        let inv_var = [(-2.0 * ls[0]).exp(), (-2.0 * ls[1]).exp(), (-2.0 * ls[2]).exp()];
        let var = [(2.0 * ls[0]).exp(), (2.0 * ls[1]).exp(), (2.0 * ls[2]).exp()];
        Ok(Prepared {
            mu: g.mu,
            unit_quat,
            raw_quat: g.quat,
            rot,
            inv_var,
            precision: linalg::rotate_diag(&rot, inv_var),
            covariance: linalg::rotate_diag(&rot, var),
            rho: linalg::softplus(g.rho_raw),
            rho_raw: g.rho_raw,
        })
    }

    /// Half extents of the axis-aligned box enclosing the `k`-sigma ellipsoid.
    pub fn half_extent(&self, k: f64) -> Vec3 {
        [
            k * self.covariance[0][0].sqrt(),
            k * self.covariance[1][1].sqrt(),
            k * self.covariance[2][2].sqrt(),
        ]
    }
}

/// Gradients of a scalar w.r.t. one primitive's raw parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrimitiveGrad {
    pub mu: Vec3,
    pub quat: Quat,
    pub log_scale: Vec3,
    pub rho_raw: f64,
}

impl PrimitiveGrad {
    fn add_assign(&mut self, o: &PrimitiveGrad) {
        for k in 0..3 {
            self.mu[k] += o.mu[k];
            self.log_scale[k] += o.log_scale[k];
        }
        for k in 0..4 {
            self.quat[k] += o.quat[k];
        }
        self.rho_raw += o.rho_raw;
    }
}

/// Accumulator for `∂f/∂P` (precision matrix), `∂f/∂μ` and `∂f/∂ρ`, reduced
/// onto raw parameters by [`GradAccum::finish`].
#[derive(Debug, Clone, Copy, Default)]
struct GradAccum {
    d_precision: Mat3,
    d_mu: Vec3,
    d_rho: f64,
}

impl GradAccum {
    fn finish(&self, p: &Prepared) -> PrimitiveGrad {
        // Symmetrize, then pull back through P = R D Rᵀ.
        let mut gs = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                gs[i][j] = 0.5 * (self.d_precision[i][j] + self.d_precision[j][i]);
            }
        }
        let rt_g_r = linalg::mat_mul(&linalg::transpose(&p.rot), &linalg::mat_mul(&gs, &p.rot));
        let g_r = linalg::mat_mul(&gs, &p.rot);
        let mut d_rot = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                d_rot[i][j] = 2.0 * g_r[i][j] * p.inv_var[j];
            }
        }
        let d_unit = linalg::quat_to_mat_backward(p.unit_quat, &d_rot);
        PrimitiveGrad {
            mu: self.d_mu,
            quat: linalg::quat_normalize_backward(p.raw_quat, d_unit),
            log_scale: [
                -2.0 * p.inv_var[0] * rt_g_r[0][0],
                -2.0 * p.inv_var[1] * rt_g_r[1][1],
                -2.0 * p.inv_var[2] * rt_g_r[2][2],
            ],
            rho_raw: self.d_rho * linalg::sigmoid(p.rho_raw),
        }
    }
}

/// Closed-form terms of the line integral along `origin + t·dir`.
struct LineTerms {
    value: f64,
    a: f64,
    b: f64,
    pd: Vec3,
    p_delta: Vec3,
    delta: Vec3,
    /// Value without the density factor.
    shape: f64,
}

#[inline]
fn line_terms(p: &Prepared, origin: Vec3, dir: Vec3, cull: f64) -> Option<LineTerms> {
    let delta = linalg::sub(origin, p.mu);
    let pd = linalg::mat_vec(&p.precision, dir);
    let p_delta = linalg::mat_vec(&p.precision, delta);
    let a = linalg::dot(dir, pd);
    let b = linalg::dot(dir, p_delta);
    let c = linalg::dot(delta, p_delta);
    let m = (c - b * b / a).max(0.0);
    if m > cull * cull {
        return None;
    }
    let shape = (2.0 * PI / a).sqrt() * (-0.5 * m).exp();
    Some(LineTerms {
        value: p.rho * shape,
        a,
        b,
        pd,
        p_delta,
        delta,
        shape,
    })
}

#[inline]
fn line_backward(dir: Vec3, t: &LineTerms, upstream: f64, acc: &mut GradAccum) {
    let f = t.value * upstream;
    let fa = f * (-0.5 / t.a - 0.5 * t.b * t.b / (t.a * t.a));
    let fb = f * t.b / t.a;
    let fc = -0.5 * f;
    for i in 0..3 {
        for j in 0..3 {
            acc.d_precision[i][j] +=
                fa * dir[i] * dir[j] + fb * dir[i] * t.delta[j] + fc * t.delta[i] * t.delta[j];
        }
        acc.d_mu[i] -= fb * t.pd[i] + 2.0 * fc * t.p_delta[i];
    }
    acc.d_rho += upstream * t.shape;
}

/// Line integral of one primitive along the infinite line of `ray`, zero when
/// the line passes farther than [`DEFAULT_CULL`] Mahalanobis units away.
pub fn ray_integral(g: &GaussianPrimitive, ray: &Ray) -> Result<f64> {
    ray_integral_with_cull(g, ray, DEFAULT_CULL)
}

pub fn ray_integral_with_cull(g: &GaussianPrimitive, ray: &Ray, cull: f64) -> Result<f64> {
    let p = Prepared::new(g)?;
    Ok(line_terms(&p, ray.origin, ray.dir, cull).map_or(0.0, |t| t.value))
}

/// Analytic gradient of `upstream · ray_integral(g, ray)` w.r.t. the raw
/// parameters, through the covariance factorization, softplus and quaternion
/// normalization.
pub fn ray_integral_backward(g: &GaussianPrimitive, ray: &Ray, upstream: f64) -> Result<PrimitiveGrad> {
    ray_integral_backward_with_cull(g, ray, upstream, DEFAULT_CULL)
}

pub fn ray_integral_backward_with_cull(
    g: &GaussianPrimitive,
    ray: &Ray,
    upstream: f64,
    cull: f64,
) -> Result<PrimitiveGrad> {
    let p = Prepared::new(g)?;
    let mut acc = GradAccum::default();
    if let Some(t) = line_terms(&p, ray.origin, ray.dir, cull) {
        line_backward(ray.dir, &t, upstream, &mut acc);
    }
    Ok(acc.finish(&p))
}

/// Pixel directions of one view, shared by forward and backward passes.
pub struct ViewRays {
    pub frame: DetectorFrame,
    pub dirs: Vec<Vec3>,
}

impl ViewRays {
    pub fn new(geom: &ScanGeometry, angle: f64) -> Self {
        let frame = DetectorFrame::new(geom, angle);
        let dirs = (0..geom.nv)
            .flat_map(|v| (0..geom.nu).map(move |u| (u, v)))
            .map(|(u, v)| frame.pixel_dir(u, v))
            .collect();
        ViewRays { frame, dirs }
    }

    /// Inclusive pixel rectangle `(u0, u1, v0, v1)` that can see a primitive.
    fn footprint(&self, p: &Prepared, cull: f64) -> Option<(usize, usize, usize, usize)> {
        let h = p.half_extent(cull);
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for c in 0..8 {
            let corner = [
                p.mu[0] + if c & 1 == 0 { -h[0] } else { h[0] },
                p.mu[1] + if c & 2 == 0 { -h[1] } else { h[1] },
                p.mu[2] + if c & 4 == 0 { -h[2] } else { h[2] },
            ];
            match self.frame.project(corner) {
                Some((u, v)) => {
                    umin = umin.min(u);
                    umax = umax.max(u);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
                None => {
                    // Box straddles the source plane: fall back to the full detector.
                    return Some((0, self.frame.nu - 1, 0, self.frame.nv - 1));
                }
            }
        }
        let (nu, nv) = (self.frame.nu as f64, self.frame.nv as f64);
        if umax < 0.0 || vmax < 0.0 || umin > nu - 1.0 || vmin > nv - 1.0 {
            return None;
        }
        Some((
            umin.ceil().max(0.0) as usize,
            umax.floor().min(nu - 1.0) as usize,
            vmin.ceil().max(0.0) as usize,
            vmax.floor().min(nv - 1.0) as usize,
        ))
    }
}

/// Prepares primitives, counting the degenerate ones that get skipped.
pub fn prepare_all(prims: &[GaussianPrimitive]) -> (Vec<Option<Prepared>>, usize) {
    let prepared: Vec<Option<Prepared>> = prims.par_iter().map(|g| Prepared::new(g).ok()).collect();
    let skipped = prepared.iter().filter(|p| p.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} primitives skipped: degenerate covariance");
    }
    (prepared, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Renderer {
    /// Mahalanobis cull radius; `f64::INFINITY` disables culling.
    pub cull: f64,
    /// Bin primitives into detector tiles by projected footprint.
    pub bucketing: bool,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            cull: DEFAULT_CULL,
            bucketing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    /// `nu·nv` line integrals, u-fastest.
    pub image: Vec<f64>,
    /// Primitives skipped for degenerate covariance.
    pub skipped: usize,
}

impl Renderer {
    pub fn render(&self, prims: &[GaussianPrimitive], geom: &ScanGeometry, angle: f64) -> Rendered {
        let (prepared, skipped) = prepare_all(prims);
        let rays = ViewRays::new(geom, angle);
        Rendered {
            image: self.render_prepared(&prepared, &rays),
            skipped,
        }
    }

    pub fn render_prepared(&self, prepared: &[Option<Prepared>], rays: &ViewRays) -> Vec<f64> {
        let (nu, nv) = (rays.frame.nu, rays.frame.nv);
        let origin = rays.frame.source;
        if !self.bucketing || !self.cull.is_finite() {
            return rays
                .dirs
                .par_iter()
                .map(|&d| {
                    prepared
                        .iter()
                        .flatten()
                        .filter_map(|p| line_terms(p, origin, d, self.cull))
                        .map(|t| t.value)
                        .sum()
                })
                .collect();
        }
        let (tx, ty) = (nu.div_ceil(TILE), nv.div_ceil(TILE));
        let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tx * ty];
        let footprints: Vec<_> = prepared
            .par_iter()
            .map(|p| p.as_ref().and_then(|p| rays.footprint(p, self.cull)))
            .collect();
        for (i, fp) in footprints.iter().enumerate() {
            if let Some((u0, u1, v0, v1)) = *fp {
                for by in v0 / TILE..=v1 / TILE {
                    for bx in u0 / TILE..=u1 / TILE {
                        bins[by * tx + bx].push(i);
                    }
                }
            }
        }
        let tiles: Vec<(usize, Vec<(usize, f64)>)> = bins
            .par_iter()
            .enumerate()
            .map(|(t, list)| {
                let (bx, by) = (t % tx, t / tx);
                let mut out = Vec::new();
                for v in by * TILE..((by + 1) * TILE).min(nv) {
                    for u in bx * TILE..((bx + 1) * TILE).min(nu) {
                        let pix = v * nu + u;
                        let d = rays.dirs[pix];
                        let mut acc = 0.0;
                        for &i in list {
                            let (u0, u1, v0, v1) = footprints[i].unwrap();
                            if u < u0 || u > u1 || v < v0 || v > v1 {
                                continue;
                            }
                            if let Some(t) = line_terms(prepared[i].as_ref().unwrap(), origin, d, self.cull) {
                                acc += t.value;
                            }
                        }
                        out.push((pix, acc));
                    }
                }
                (t, out)
            })
            .collect();
        let mut image = vec![0.0; nu * nv];
        for (_, px) in tiles {
            for (pix, v) in px {
                image[pix] = v;
            }
        }
        image
    }

    /// Per-primitive gradients of `Σ_pixels upstream[pixel] · image[pixel]`.
    pub fn backward_prepared(
        &self,
        prepared: &[Option<Prepared>],
        rays: &ViewRays,
        upstream: &[f64],
    ) -> Vec<PrimitiveGrad> {
        let origin = rays.frame.source;
        let nu = rays.frame.nu;
        prepared
            .par_iter()
            .map(|p| {
                let Some(p) = p else {
                    return PrimitiveGrad::default();
                };
                let mut acc = GradAccum::default();
                let mut visit = |pix: usize| {
                    let g = upstream[pix];
                    if g == 0.0 {
                        return;
                    }
                    let d = rays.dirs[pix];
                    if let Some(t) = line_terms(p, origin, d, self.cull) {
                        line_backward(d, &t, g, &mut acc);
                    }
                };
                if self.bucketing && self.cull.is_finite() {
                    if let Some((u0, u1, v0, v1)) = rays.footprint(p, self.cull) {
                        for v in v0..=v1 {
                            for u in u0..=u1 {
                                visit(v * nu + u);
                            }
                        }
                    }
                } else {
                    (0..rays.dirs.len()).for_each(&mut visit);
                }
                acc.finish(p)
            })
            .collect()
    }
}

/// Renders view `view` of `geom` with the default renderer.
pub fn render_projection(set: &GaussianSet, geom: &ScanGeometry, view: usize) -> Result<Rendered> {
    if view >= geom.n_views() {
        return Err(Error::arg(format!("view {view} out of range ({} views)", geom.n_views())));
    }
    Ok(Renderer::default().render(&set.primitives, geom, geom.angles[view]))
}

/// Inclusive voxel index range along each axis covered by a primitive's box.
fn voxel_range(p: &Prepared, grid: &VolumeGrid) -> Option<[(usize, usize); 3]> {
    let h = p.half_extent(VOXELIZE_SIGMAS);
    let min = grid.bbox().min;
    let mut r = [(0, 0); 3];
    for a in 0..3 {
        let lo = ((p.mu[a] - h[a] - min[a]) / grid.spacing[a] - 0.5).ceil();
        let hi = ((p.mu[a] + h[a] - min[a]) / grid.spacing[a] - 0.5).floor();
        if hi < 0.0 || lo > grid.dims[a] as f64 - 1.0 || lo > hi {
            return None;
        }
        r[a] = (lo.max(0.0) as usize, hi.min(grid.dims[a] as f64 - 1.0) as usize);
    }
    Some(r)
}

/// Sums the primitives' densities at voxel centers, each inside its 3σ box.
pub fn voxelize(set: &GaussianSet, grid: &VolumeGrid) -> Volume {
    let (prepared, _) = prepare_all(&set.primitives);
    voxelize_prepared(&prepared, grid)
}

pub fn voxelize_prepared(prepared: &[Option<Prepared>], grid: &VolumeGrid) -> Volume {
    let [nx, ny, nz] = grid.dims;
    let ranges: Vec<Option<[(usize, usize); 3]>> = prepared
        .par_iter()
        .map(|p| p.as_ref().and_then(|p| voxel_range(p, grid)))
        .collect();
    let mut slabs: Vec<Vec<usize>> = vec![Vec::new(); nz];
    for (i, r) in ranges.iter().enumerate() {
        if let Some(r) = r {
            for list in &mut slabs[r[2].0..=r[2].1] {
                list.push(i);
            }
        }
    }
    let mut data = vec![0.0; grid.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for &i in &slabs[k] {
            let p = prepared[i].as_ref().unwrap();
            let r = ranges[i].unwrap();
            for j in r[1].0..=r[1].1 {
                for ii in r[0].0..=r[0].1 {
                    let d = linalg::sub(grid.voxel_center(ii, j, k), p.mu);
                    let q = linalg::bilinear(d, &p.precision, d);
                    slab[ii + nx * j] += p.rho * (-0.5 * q).exp();
                }
            }
        }
    });
    debug_assert_eq!(data.len(), nx * ny * nz);
    Volume { grid: *grid, data }
}

/// Per-primitive gradients of `Σ_voxels upstream[voxel] · voxelize(...)[voxel]`.
pub fn voxelize_backward(prepared: &[Option<Prepared>], grid: &VolumeGrid, upstream: &[f64]) -> Vec<PrimitiveGrad> {
    prepared
        .par_iter()
        .map(|p| {
            let Some(p) = p else {
                return PrimitiveGrad::default();
            };
            let Some(r) = voxel_range(p, grid) else {
                return PrimitiveGrad::default();
            };
            let mut acc = GradAccum::default();
            for k in r[2].0..=r[2].1 {
                for j in r[1].0..=r[1].1 {
                    for i in r[0].0..=r[0].1 {
                        let g = upstream[grid.index(i, j, k)];
                        if g == 0.0 {
                            continue;
                        }
                        let d = linalg::sub(grid.voxel_center(i, j, k), p.mu);
                        let pd = linalg::mat_vec(&p.precision, d);
                        let e = (-0.5 * linalg::dot(d, pd)).exp();
                        let v = p.rho * e * g;
                        for a in 0..3 {
                            for b in 0..3 {
                                acc.d_precision[a][b] -= 0.5 * v * d[a] * d[b];
                            }
                            acc.d_mu[a] += v * pd[a];
                        }
                        acc.d_rho += g * e;
                    }
                }
            }
            acc.finish(p)
        })
        .collect()
}

/// Sums per-primitive gradient lists elementwise.
pub fn sum_grads(a: &mut [PrimitiveGrad], b: &[PrimitiveGrad]) {
    for (x, y) in a.iter_mut().zip(b) {
        x.add_assign(y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(mu: Vec3) -> GaussianPrimitive {
        GaussianPrimitive {
            mu,
            quat: linalg::IDENTITY_QUAT,
            log_scale: [0.0; 3],
            rho_raw: linalg::softplus_inv(1.5),
        }
    }

    #[test]
    fn covariance_identity_and_permutation() {
        let s = covariance(linalg::IDENTITY_QUAT, [0.0; 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
        let h = std::f64::consts::FRAC_PI_4;
        let q = [h.cos(), 0.0, 0.0, h.sin()];
        let (a, b, c) = (0.5f64, 2.0f64, 1.3f64);
        let s = covariance(q, [a.ln(), b.ln(), c.ln()]);
        let expect = [b * b, a * a, c * c];
        for i in 0..3 {
            assert!((s[i][i] - expect[i]).abs() < 1e-12);
        }
        assert!(s[0][1].abs() < 1e-12);
    }

    #[test]
    fn unit_gaussian_line_integrals() {
        let g = unit([0.3, -0.2, 0.1]);
        let rho = g.density();
        let through = Ray::unbounded([-5.0, -0.2, 0.1], [1.0, 0.0, 0.0]);
        let v = ray_integral(&g, &through).unwrap();
        assert!((v - rho * (2.0 * PI).sqrt()).abs() < 1e-12);
        let beta = 1.2;
        let off = Ray::unbounded([0.3, -3.0, 0.1 + beta], [0.0, 1.0, 0.0]);
        let v = ray_integral(&g, &off).unwrap();
        assert!((v - rho * (2.0 * PI).sqrt() * (-beta * beta / 2.0).exp()).abs() < 1e-12);
        let far = Ray::unbounded([0.3, -3.0, 0.1 + 3.5], [0.0, 1.0, 0.0]);
        assert_eq!(ray_integral(&g, &far).unwrap(), 0.0);
    }

    #[test]
    fn rho_and_axial_mu_gradients() {
        let mut g = unit([0.0; 3]);
        g.rho_raw = 0.7;
        let ray = Ray::unbounded([-4.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let grad = ray_integral_backward(&g, &ray, 1.0).unwrap();
        let d_rho = grad.rho_raw / linalg::sigmoid(0.7);
        assert!((d_rho - (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!(grad.mu[0].abs() < 1e-14);
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let mut g = unit([0.0; 3]);
        g.log_scale = [0.0, 0.0, -20.0];
        let ray = Ray::unbounded([-4.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert!(matches!(ray_integral(&g, &ray), Err(Error::Numerical(_))));
        let geom = ScanGeometry::circular(4.0, 6.0, (8, 8), (0.2, 0.2), 2, None).unwrap();
        let r = render_projection(&GaussianSet::new(vec![g, unit([0.0; 3])]), &geom, 0).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.image.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn zero_density_renders_zero() {
        let mut g = unit([0.0; 3]);
        g.rho_raw = -800.0;
        let geom = ScanGeometry::circular(4.0, 6.0, (8, 8), (0.2, 0.2), 2, None).unwrap();
        let r = render_projection(&GaussianSet::new(vec![g; 3]), &geom, 1).unwrap();
        assert!(r.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_primitive_peaks_at_detector_center() {
        let g = GaussianPrimitive::isotropic([0.0; 3], 0.2, 1.0);
        let geom = ScanGeometry::circular(4.0, 6.0, (9, 9), (0.1, 0.1), 1, None).unwrap();
        let img = render_projection(&GaussianSet::new(vec![g]), &geom, 0).unwrap().image;
        let peak = img.iter().cloned().fold(0.0, f64::max);
        assert_eq!(img[4 * 9 + 4], peak);
        // Radial symmetry: pixels at equal offsets match.
        for (a, b) in [((3, 4), (5, 4)), ((4, 3), (4, 5)), ((2, 2), (6, 6)), ((2, 6), (6, 2))] {
            let va = img[a.1 * 9 + a.0];
            let vb = img[b.1 * 9 + b.0];
            assert!((va - vb).abs() < 1e-12 * peak);
        }
        assert!((img[4 * 9 + 3] - img[3 * 9 + 4]).abs() < 1e-12 * peak);
    }

    #[test]
    fn voxelize_peak_and_linearity() {
        let grid = VolumeGrid::cube(9, 0.9);
        let c = grid.voxel_center(4, 3, 5);
        let g = GaussianPrimitive::isotropic(c, 0.15, 0.8);
        let v = voxelize(&GaussianSet::new(vec![g]), &grid);
        let max = v.max();
        assert_eq!(v.get(4, 3, 5), max);
        assert!((max - 0.8).abs() < 1e-12);

        let a = GaussianSet::new(vec![g, GaussianPrimitive::isotropic([0.1, 0.2, -0.3], 0.2, 0.3)]);
        let b = GaussianSet::new(vec![GaussianPrimitive::isotropic([-0.4, 0.0, 0.2], 0.1, 1.1)]);
        let va = voxelize(&a, &grid);
        let vb = voxelize(&b, &grid);
        let vab = voxelize(&a.concat(&b), &grid);
        for i in 0..grid.len() {
            assert!((vab.data[i] - va.data[i] - vb.data[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_set_renders_and_voxelizes_to_zero() {
        let geom = ScanGeometry::circular(4.0, 6.0, (8, 8), (0.2, 0.2), 2, None).unwrap();
        let r = render_projection(&GaussianSet::default(), &geom, 0).unwrap();
        assert!(r.image.iter().all(|&v| v == 0.0));
        let grid = VolumeGrid::cube(4, 1.0);
        assert!(voxelize(&GaussianSet::default(), &grid).data.iter().all(|&v| v == 0.0));
    }
}
