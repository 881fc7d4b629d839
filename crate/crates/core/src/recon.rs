//! Iteration-based initialization: CGLS coarse reconstruction, ASD-POCS total
//! variation refinement and conversion of the refined volume into Gaussian
//! primitives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProjectionSet, Volume};
use crate::gsplat::{GaussianPrimitive, GaussianSet};
use crate::linalg;
use crate::projector::LinearProjector;
use crate::tv::{self, TV_EPS};

/// A linear map with an explicit adjoint, acting on flat vectors.
pub trait LinearOperator {
    fn domain_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

impl LinearOperator for LinearProjector {
    fn domain_len(&self) -> usize {
        self.grid.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let vol = Volume {
            grid: self.grid,
            data: x.to_vec(),
        };
        self.forward(&vol).expect("grid matches by construction").data
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let proj = ProjectionSet {
            geom: self.geom.clone(),
            data: y.to_vec(),
        };
        self.adjoint(&proj).expect("dims match by construction").data
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CglsConfig {
    pub max_iters: usize,
    /// Stop once `‖Aᵀ(b − Ax)‖ / ‖Aᵀb‖` falls to this value.
    pub tol: f64,
    /// Clamp negative voxels to zero once, after the last iteration.
    pub nonneg_final: bool,
}

impl Default for CglsConfig {
    fn default() -> Self {
        CglsConfig {
            max_iters: 30,
            tol: 1e-6,
            nonneg_final: true,
        }
    }
}

impl CglsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol >= 0.0) {
            return Err(Error::arg("cgls: max_iters must be >= 1 and tol >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CglsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x_k‖` for `k = 0..=iterations`.
    pub residual_norms: Vec<f64>,
    /// `‖Aᵀ(b − A x_k)‖` for `k = 0..=iterations`.
    pub normal_residual_norms: Vec<f64>,
}

/// Conjugate gradient on the normal equations of `min ‖A x − b‖²`, from `x = 0`.
pub fn cgls_operator<A: LinearOperator>(op: &A, b: &[f64], cfg: &CglsConfig) -> Result<CglsResult> {
    cfg.validate()?;
    let n = op.domain_len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = op.apply_adjoint(&r);
    let s0 = norm(&s);
    let mut residual_norms = vec![norm(&r)];
    let mut normal_residual_norms = vec![s0];
    if s0 == 0.0 {
        return Ok(CglsResult {
            x,
            iterations: 0,
            residual_norms,
            normal_residual_norms,
        });
    }
    let mut p = s.clone();
    let mut gamma = s0 * s0;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let q = op.apply(&p);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
        s = op.apply_adjoint(&r);
        let gamma_new = dot(&s, &s);
        iterations += 1;
        residual_norms.push(norm(&r));
        normal_residual_norms.push(gamma_new.sqrt());
        if gamma_new.sqrt() / s0 <= cfg.tol {
            break;
        }
        let beta = gamma_new / gamma;
        p.iter_mut().zip(&s).for_each(|(p, s)| *p = s + beta * *p);
        gamma = gamma_new;
    }
    if cfg.nonneg_final {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(CglsResult {
        x,
        iterations,
        residual_norms,
        normal_residual_norms,
    })
}

pub fn cgls(p: &LinearProjector, proj: &ProjectionSet, cfg: &CglsConfig) -> Result<Volume> {
    Ok(cgls_with_report(p, proj, cfg)?.0)
}

pub fn cgls_with_report(p: &LinearProjector, proj: &ProjectionSet, cfg: &CglsConfig) -> Result<(Volume, CglsResult)> {
    check_proj(p, proj)?;
    let b = masked(p, proj);
    let res = cgls_operator(p, &b, cfg)?;
    let vol = Volume::from_data(p.grid, res.x.clone())?;
    Ok((vol, res))
}

fn check_proj(p: &LinearProjector, proj: &ProjectionSet) -> Result<()> {
    if proj.geom.n_views() != p.geom.n_views() || proj.geom.nu != p.geom.nu || proj.geom.nv != p.geom.nv {
        return Err(Error::arg("projection dims do not match projector geometry"));
    }
    Ok(())
}

/// Measurements restricted to the projector's active views.
fn masked(p: &LinearProjector, proj: &ProjectionSet) -> Vec<f64> {
    match &p.view_subset {
        None => proj.data.clone(),
        Some(views) => {
            let mut out = ProjectionSet::zeros(p.geom.clone());
            for &v in views {
                out.view_mut(v).copy_from_slice(proj.view(v));
            }
            out.data
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AsdPocsConfig {
    pub outer_iters: usize,
    /// Relaxation of the data-consistency pass, in `(0, 2)`.
    pub art_relax: f64,
    /// Steepest-descent steps on TV per outer iteration.
    pub tv_iters: usize,
    /// Initial TV step (L2 displacement per step); `None` means `0.2·max(x0)`.
    pub tv_step_init: Option<f64>,
    pub tv_step_decay: f64,
    /// Cap on the TV displacement relative to the data-step displacement.
    pub alpha_ratio: f64,
}

impl Default for AsdPocsConfig {
    fn default() -> Self {
        AsdPocsConfig {
            outer_iters: 20,
            art_relax: 1.0,
            tv_iters: 20,
            tv_step_init: None,
            tv_step_decay: 0.95,
            alpha_ratio: 0.5,
        }
    }
}

impl AsdPocsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.outer_iters >= 1
            && self.art_relax > 0.0
            && self.art_relax < 2.0
            && self.tv_step_init.map_or(true, |s| s > 0.0)
            && self.tv_step_decay > 0.0
            && self.tv_step_decay < 1.0
            && self.alpha_ratio > 0.0;
        if !ok {
            return Err(Error::arg(
                "asd_pocs: outer_iters >= 1, art_relax in (0,2), tv_step_decay in (0,1), positive steps required",
            ));
        }
        Ok(())
    }
}

/// Per-outer-iteration record of an ASD-POCS run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AsdPocsReport {
    /// `‖x_after_data_step − x_before‖` per outer iteration.
    pub data_step: Vec<f64>,
    /// TV before and after every descent step, grouped by outer iteration.
    pub tv_phases: Vec<Vec<f64>>,
}

/// Row and column sums of a single view, used to normalize SART updates.
struct ViewNorms {
    row: Vec<f64>,
    col: Vec<f64>,
}

fn view_norms(p: &LinearProjector, view: usize) -> ViewNorms {
    let ones = Volume {
        grid: p.grid,
        data: vec![1.0; p.grid.len()],
    };
    let mut row = vec![0.0; p.geom.pixels_per_view()];
    p.forward_view_into(&ones, view, &mut row);
    let col = p.adjoint_view(view, &vec![1.0; row.len()]).data;
    ViewNorms { row, col }
}

struct Sart<'a> {
    p: &'a LinearProjector,
    views: Vec<usize>,
    norms: Vec<ViewNorms>,
}

impl<'a> Sart<'a> {
    fn new(p: &'a LinearProjector) -> Self {
        let views = p.active_views();
        let norms = views.iter().map(|&v| view_norms(p, v)).collect();
        Sart { p, views, norms }
    }

    fn pass(&self, x: &mut Volume, proj: &ProjectionSet, relax: f64) {
        let mut ax = vec![0.0; self.p.geom.pixels_per_view()];
        for (&view, n) in self.views.iter().zip(&self.norms) {
            self.p.forward_view_into(x, view, &mut ax);
            let b = proj.view(view);
            let resid: Vec<f64> = (0..ax.len())
                .map(|i| if n.row[i] > 1e-12 { (b[i] - ax[i]) / n.row[i] } else { 0.0 })
                .collect();
            let upd = self.p.adjoint_view(view, &resid);
            for ((xv, u), c) in x.data.iter_mut().zip(&upd.data).zip(&n.col) {
                if *c > 1e-12 {
                    *xv += relax * u / c;
                }
            }
        }
    }
}

/// One ordered-subsets SART sweep over the active views (one subset per view).
pub fn sart_pass(x: &Volume, p: &LinearProjector, proj: &ProjectionSet, relax: f64) -> Result<Volume> {
    if x.grid != p.grid {
        return Err(Error::arg("volume grid does not match projector grid"));
    }
    check_proj(p, proj)?;
    let mut out = x.clone();
    Sart::new(p).pass(&mut out, proj, relax);
    Ok(out)
}

pub fn asd_pocs(x0: &Volume, p: &LinearProjector, proj: &ProjectionSet, cfg: &AsdPocsConfig) -> Result<Volume> {
    Ok(asd_pocs_with_report(x0, p, proj, cfg)?.0)
}

/// Alternates a relaxed SART pass and nonnegativity projection with a phase of
/// TV steepest descent. Each descent step backtracks until TV does not
/// increase, and the phase's total displacement stays within
/// `alpha_ratio ×` the data-step displacement.
pub fn asd_pocs_with_report(
    x0: &Volume,
    p: &LinearProjector,
    proj: &ProjectionSet,
    cfg: &AsdPocsConfig,
) -> Result<(Volume, AsdPocsReport)> {
    cfg.validate()?;
    if x0.grid != p.grid {
        return Err(Error::arg("initial volume grid does not match projector grid"));
    }
    check_proj(p, proj)?;
    let dims = p.grid.dims;
    let sart = Sart::new(p);
    let mut x = x0.clone();
    let mut tv_step = cfg.tv_step_init.unwrap_or(0.2 * x0.max().max(0.0));
    let mut report = AsdPocsReport::default();
    for _ in 0..cfg.outer_iters {
        let before = x.data.clone();
        sart.pass(&mut x, proj, cfg.art_relax);
        x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let dp = x.data.iter().zip(&before).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        report.data_step.push(dp);
        let mut phase = Vec::with_capacity(cfg.tv_iters + 1);
        if cfg.tv_iters > 0 {
            let step = tv_step.min(cfg.alpha_ratio * dp / cfg.tv_iters as f64);
            let mut tv_now = tv::total_variation(&x.data, dims, TV_EPS);
            phase.push(tv_now);
            for _ in 0..cfg.tv_iters {
                let (_, g) = tv::total_variation_grad(&x.data, dims, TV_EPS);
                let gn = norm(&g);
                if gn == 0.0 || step == 0.0 {
                    phase.push(tv_now);
                    continue;
                }
                let mut s = step;
                let mut accepted = false;
                for _ in 0..40 {
                    let trial: Vec<f64> = x.data.iter().zip(&g).map(|(v, g)| v - s * g / gn).collect();
                    let tv_trial = tv::total_variation(&trial, dims, TV_EPS);
                    if tv_trial <= tv_now {
                        x.data = trial;
                        tv_now = tv_trial;
                        accepted = true;
                        break;
                    }
                    s *= 0.5;
                }
                phase.push(tv_now);
                if !accepted {
                    break;
                }
            }
        }
        report.tv_phases.push(phase);
        tv_step *= cfg.tv_step_decay;
    }
    Ok((x, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianInitConfig {
    pub n_points: usize,
    /// Voxels at or below this attenuation are not sampled.
    pub density_threshold: f64,
    /// Initial standard deviation as a multiple of the voxel spacing.
    pub init_scale_voxels: f64,
    pub seed: u64,
}

impl Default for GaussianInitConfig {
    fn default() -> Self {
        GaussianInitConfig {
            n_points: 20000,
            density_threshold: 0.05,
            init_scale_voxels: 0.6,
            seed: 0,
        }
    }
}

/// Samples primitive centers from voxels above the threshold, without
/// replacement and with probability proportional to voxel value
/// (exponential-key weighted sampling), jittered inside the voxel.
pub fn volume_to_gaussians(vol: &Volume, cfg: &GaussianInitConfig) -> Result<GaussianSet> {
    if cfg.n_points == 0 || !(cfg.density_threshold >= 0.0) || !(cfg.init_scale_voxels > 0.0) {
        return Err(Error::arg(
            "gaussian init: n_points >= 1, density_threshold >= 0, init_scale_voxels > 0 required",
        ));
    }
    if !vol.is_finite() {
        return Err(Error::Data("volume contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut keyed: Vec<(f64, usize)> = vol
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cfg.density_threshold)
        .map(|(i, &v)| {
            let u: f64 = rng.sample(Open01);
            (u.ln() / v, i)
        })
        .collect();
    if keyed.is_empty() {
        return Err(Error::Init(format!(
            "no voxel exceeds density_threshold {}",
            cfg.density_threshold
        )));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(cfg.n_points);
    keyed.sort_by_key(|&(_, i)| i);

    let grid = vol.grid;
    let [nx, ny, _] = grid.dims;
    let log_scale = [
        (cfg.init_scale_voxels * grid.spacing[0]).ln(),
        (cfg.init_scale_voxels * grid.spacing[1]).ln(),
        (cfg.init_scale_voxels * grid.spacing[2]).ln(),
    ];
    let primitives = keyed
        .into_iter()
        .map(|(_, idx)| {
            let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
            let c = grid.voxel_center(i, j, k);
            let mut mu = [0.0; 3];
            for a in 0..3 {
                let u: f64 = rng.sample(Open01);
                mu[a] = c[a] + (u - 0.5) * grid.spacing[a];
            }
            GaussianPrimitive {
                mu,
                quat: linalg::IDENTITY_QUAT,
                log_scale,
                rho_raw: linalg::softplus_inv(vol.data[idx]),
            }
        })
        .collect();
    Ok(GaussianSet::new(primitives))
}
