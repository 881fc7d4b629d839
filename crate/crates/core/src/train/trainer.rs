//! Progressive training: plain primitives during warm-up, then primitives
//! routed through the deformation field.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::descriptor::GradientHistogram;
use super::losses::{self, Image};
use super::metrics::MetricsRow;
use super::optim::{adam_step, AdamState, OptimSchedule};
use super::semantic::{self, SemConfig};
use crate::error::{Error, Result};
use crate::geometry::{ProjectionSet, Volume, VolumeGrid};
use crate::gsplat::{self, GaussianSet, Renderer, ScaleBounds, ViewRays};
use crate::linalg;
use crate::neural::splat::{self, PrimTensors, PrimVars};
use crate::neural::{finalize, Checkpoint, DeformationField, FieldConfig, FieldMode, ParamGroup, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_tv: f64,
    pub lambda_sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 0.25,
            lambda_tv: 0.05,
            lambda_sem: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_ssim, self.lambda_tv, self.lambda_sem].iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::arg("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Values of the individual loss terms at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub l1: f64,
    pub dssim: f64,
    pub tv: f64,
    pub sem: f64,
}

/// `ℒ₁ + λ_SSIM·ℒ_SSIM + λ_TV·ℒ_TV + λ_sem·ℒ_sem`.
pub fn total_loss(t: &LossTerms, w: &LossWeights) -> f64 {
    t.l1 + w.lambda_ssim * t.dssim + w.lambda_tv * t.tv + w.lambda_sem * t.sem
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub schedule: OptimSchedule,
    /// Deformation field settings; in an experiment config these come from
    /// the `model` section.
    #[serde(skip)]
    pub field: FieldConfig,
    pub sem: SemConfig,
    /// Side of the random voxel block the TV term is evaluated on.
    pub tv_patch: usize,
    /// Evaluate volume quality every this many iterations; 0 means only at
    /// the end.
    pub eval_every: usize,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Abort when the loss exceeds this multiple of its value at
    /// `divergence_ref_iter`.
    pub divergence_factor: f64,
    pub divergence_ref_iter: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            schedule: OptimSchedule::default(),
            field: FieldConfig::default(),
            sem: SemConfig::default(),
            tv_patch: 32,
            eval_every: 1000,
            checkpoint_every: 5000,
            divergence_factor: 10.0,
            divergence_ref_iter: 100,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.schedule.validate()?;
        if self.tv_patch < 2 || self.sem.crop < 2 || self.sem.every == 0 {
            return Err(Error::arg("tv_patch and sem.crop must be >= 2, sem.every >= 1"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::arg("divergence_factor must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Static,
    Dynamic { n_phases: usize },
}

/// Training inputs: projections, reconstruction grid and optional
/// ground-truth volumes (one per phase, or one for static scenes).
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub proj: &'a ProjectionSet,
    pub grid: VolumeGrid,
    pub truth: &'a [Volume],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// One volume for static models, one per phase for dynamic ones.
    pub volumes: Vec<Volume>,
    /// Per ground-truth volume.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl Evaluation {
    pub fn mean_psnr(&self) -> Option<f64> {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub gaussians: PrimTensors,
    pub field: Option<DeformationField>,
    pub metrics: Vec<MetricsRow>,
    pub evaluation: Evaluation,
    pub iterations: usize,
}

impl TrainOutput {
    pub fn checkpoint(&self, grid: VolumeGrid) -> Checkpoint {
        Checkpoint {
            iteration: self.iterations,
            grid,
            gaussians: self.gaussians.clone(),
            field: self.field.clone(),
        }
    }
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub data: TrainData<'a>,
    pub mode: TrainMode,
    pub prims: PrimTensors,
    pub field: Option<DeformationField>,
    prim_state: [AdamState; 4],
    field_state: Vec<AdamState>,
    rays: Vec<ViewRays>,
    renderer: Renderer,
    bounds: ScaleBounds,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    reference_loss: Option<f64>,
    pub iteration: usize,
}

const PRIM_GROUPS: [ParamGroup; 4] = [ParamGroup::Position, ParamGroup::Rotation, ParamGroup::Scale, ParamGroup::Density];

impl<'a> Trainer<'a> {
    pub fn new(data: TrainData<'a>, init: &GaussianSet, cfg: TrainConfig, mode: TrainMode) -> Result<Self> {
        cfg.validate()?;
        data.grid.validate()?;
        data.proj.geom.validate()?;
        if init.is_empty() {
            return Err(Error::Init("initial Gaussian set is empty".into()));
        }
        if data.proj.data.len() != data.proj.geom.n_views() * data.proj.geom.pixels_per_view() {
            return Err(Error::arg("projection data does not match its geometry"));
        }
        match mode {
            TrainMode::Static => {
                if data.truth.iter().any(|t| t.grid.dims != data.grid.dims) {
                    return Err(Error::arg("ground-truth grid does not match reconstruction grid"));
                }
            }
            TrainMode::Dynamic { n_phases } => {
                if !data.proj.geom.is_dynamic() || data.proj.geom.n_phases != n_phases {
                    return Err(Error::arg("dynamic training needs phase-tagged projections"));
                }
                if !data.truth.is_empty() && data.truth.len() != n_phases {
                    return Err(Error::arg(format!(
                        "dynamic training needs {n_phases} ground-truth volumes, got {}",
                        data.truth.len()
                    )));
                }
            }
        }
        let geom = &data.proj.geom;
        let rays = geom.angles.iter().map(|&a| ViewRays::new(geom, a)).collect();
        let mut prims = PrimTensors::from_set(init);
        let bounds = ScaleBounds::for_grid(&data.grid);
        prims.log_scale.data.iter_mut().for_each(|v| *v = bounds.clamp(*v));
        Ok(Trainer {
            prim_state: Default::default(),
            field_state: Vec::new(),
            rays,
            renderer: Renderer::default(),
            bounds,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: Vec::new(),
            cursor: 0,
            reference_loss: None,
            iteration: 0,
            cfg,
            data,
            mode,
            prims,
            field: None,
        })
    }

    /// Constructs the fresh deformation field used after warm-up.
    pub fn attach_field(&mut self) -> Result<()> {
        let mode = match self.mode {
            TrainMode::Static => FieldMode::Static,
            TrainMode::Dynamic { n_phases } => FieldMode::Dynamic { n_phases },
        };
        let f = DeformationField::new(self.cfg.field, mode, self.data.grid)?;
        self.field_state = vec![AdamState::default(); f.params.len()];
        self.field = Some(f);
        Ok(())
    }

    fn phase_of(&self, view: usize) -> Option<usize> {
        match self.mode {
            TrainMode::Static => None,
            TrainMode::Dynamic { .. } => self.data.proj.geom.phase_of(view),
        }
    }

    fn primitives<'t>(&'t self, tape: &mut Tape<'t>, phase: Option<usize>) -> Result<PrimVars> {
        let leaves = PrimVars::leaves(tape, &self.prims);
        match (&self.field, phase, self.mode) {
            (Some(f), _, TrainMode::Static) => f.deform_tape(tape, &leaves, None),
            (Some(f), Some(p), _) => f.deform_tape(tape, &leaves, Some(p)),
            _ => Ok(finalize(tape, &leaves, self.bounds)),
        }
    }

    /// Current rendering of training view `view`.
    pub fn render_view(&self, view: usize) -> Result<Vec<f64>> {
        if view >= self.rays.len() {
            return Err(Error::arg(format!("view {view} out of range")));
        }
        let mut tape = Tape::new();
        let p = self.primitives(&mut tape, self.phase_of(view))?;
        let img = splat::render(&mut tape, &p, &self.rays[view], self.renderer);
        Ok(tape.value(img).data.clone())
    }

    /// Current primitives as seen by the renderer for `phase`.
    pub fn current_set(&self, phase: Option<usize>) -> Result<GaussianSet> {
        let mut tape = Tape::new();
        let p = self.primitives(&mut tape, phase)?;
        Ok(p.values(&tape).to_set())
    }

    fn next_view(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..self.rays.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn tv_block(&mut self) -> Result<VolumeGrid> {
        let g = self.data.grid;
        let mut dims = [0; 3];
        let mut off = [0; 3];
        for a in 0..3 {
            dims[a] = self.cfg.tv_patch.min(g.dims[a]);
            off[a] = self.rng.gen_range(0..=g.dims[a] - dims[a]);
        }
        g.subgrid(off, dims)
    }

    /// Runs iteration `self.iteration + 1` on the next view of the shuffled
    /// order and returns the loss terms.
    pub fn step(&mut self) -> Result<LossTerms> {
        let k = self.iteration + 1;
        if k == self.cfg.schedule.warmup_iters + 1 && self.field.is_none() {
            self.attach_field()?;
        }
        let view = self.next_view();
        let block = self.tv_block()?;
        let geom = &self.data.proj.geom;
        let sem_due = self.field.is_some() && self.cfg.weights.lambda_sem > 0.0 && k % self.cfg.sem.every == 0;
        let side = sem_due.then(|| ViewRays::new(geom, semantic::side_angle(&geom.angles, view)));
        let sem_seed: u64 = self.rng.gen();
        let w = self.cfg.weights;
        let (nu, nv) = (geom.nu, geom.nv);

        let (terms, prim_grads, field_grads) = {
            let mut tape = Tape::new();
            let leaves = PrimVars::leaves(&mut tape, &self.prims);
            let p = match (&self.field, self.mode) {
                (Some(f), TrainMode::Static) => f.deform_tape(&mut tape, &leaves, None)?,
                (Some(f), TrainMode::Dynamic { .. }) => f.deform_tape(&mut tape, &leaves, self.phase_of(view))?,
                (None, _) => finalize(&mut tape, &leaves, self.bounds),
            };
            let img = splat::render(&mut tape, &p, &self.rays[view], self.renderer);
            let pred = tape.value(img).data.clone();
            let pi = Image::new(&pred, nu, nv)?;
            let ti = Image::new(self.data.proj.view(view), nu, nv)?;
            let (l1, g1) = losses::loss_l1_grad(&pi, &ti)?;
            let (dssim, gd) = losses::loss_dssim_grad(&pi, &ti)?;
            let mut g_img: Vec<f64> = g1.iter().zip(&gd).map(|(a, b)| a + w.lambda_ssim * b).collect();

            let vox = splat::voxelize(&mut tape, &p, block);
            let (tv, gtv) = losses::loss_tv3d_grad(&tape.value(vox).data, block.dims)?;
            let mut seeds = vec![(vox, Tensor::row_vector(gtv.iter().map(|g| w.lambda_tv * g).collect()))];

            let mut sem = 0.0;
            if let Some(side) = &side {
                let side_img = splat::render(&mut tape, &p, side, self.renderer);
                let vals = p.values(&tape);
                let dens: Vec<f64> = vals.rho_raw.data.iter().map(|&r| linalg::softplus(r)).collect();
                let centers: Vec<_> = semantic::sample_dense(&dens, self.cfg.sem.count, sem_seed)
                    .into_iter()
                    .map(|i| {
                        let m = vals.mu.row(i);
                        [m[0], m[1], m[2]]
                    })
                    .collect();
                let res = semantic::semantic_loss(
                    &pred,
                    &self.rays[view].frame,
                    &tape.value(side_img).data,
                    &side.frame,
                    &centers,
                    self.cfg.sem.crop,
                    &GradientHistogram::default(),
                );
                sem = res.value;
                g_img.iter_mut().zip(&res.grad_a).for_each(|(a, b)| *a += w.lambda_sem * b);
                seeds.push((side_img, Tensor::row_vector(res.grad_b.iter().map(|g| w.lambda_sem * g).collect())));
            }
            seeds.push((img, Tensor::row_vector(g_img)));
            let terms = LossTerms { l1, dssim, tv, sem };
            for (name, v) in [("l1", l1), ("dssim", dssim), ("tv", tv), ("sem", sem)] {
                if !v.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss term {name} at iteration {k}")));
                }
            }
            let grads = tape.backward(&seeds);
            let prim_grads: Vec<Tensor> = leaves
                .as_array()
                .iter()
                .zip(self.prims.tensors())
                .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
                .collect();
            (terms, prim_grads, grads.params)
        };

        let total = total_loss(&terms, &w);
        if k == self.cfg.divergence_ref_iter {
            self.reference_loss = Some(total);
        }
        if let Some(r) = self.reference_loss {
            if k > self.cfg.divergence_ref_iter && total > self.cfg.divergence_factor * r {
                return Err(Error::Divergence(format!(
                    "loss {total} at iteration {k} exceeds {}x its value {r} at iteration {}",
                    self.cfg.divergence_factor, self.cfg.divergence_ref_iter
                )));
            }
        }

        let sched = self.cfg.schedule;
        for (((t, g), st), grp) in self
            .prims
            .tensors_mut()
            .into_iter()
            .zip(&prim_grads)
            .zip(self.prim_state.iter_mut())
            .zip(PRIM_GROUPS)
        {
            adam_step(&mut t.data, &g.data, st, sched.lr_at(grp, k), &sched);
        }
        let b = self.bounds;
        self.prims.log_scale.data.iter_mut().for_each(|v| *v = b.clamp(*v));
        if let Some(f) = &mut self.field {
            for (id, g) in field_grads.iter() {
                let p = &mut f.params.params[id.0];
                adam_step(&mut p.value.data, &g.data, &mut self.field_state[id.0], sched.lr_at(p.group, k), &sched);
            }
        }
        self.iteration = k;
        Ok(terms)
    }

    /// Voxelizes the current model (per phase when dynamic) and scores it
    /// against the ground truth.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let g = self.data.grid;
        let volumes: Vec<Volume> = match self.mode {
            TrainMode::Static => vec![gsplat::voxelize(&self.current_set(None)?, &g)],
            TrainMode::Dynamic { n_phases } => (0..n_phases)
                .map(|p| {
                    let phase = self.field.as_ref().map(|_| p);
                    Ok(gsplat::voxelize(&self.current_set(phase)?, &g))
                })
                .collect::<Result<_>>()?,
        };
        let mut psnr = Vec::new();
        let mut ssim = Vec::new();
        for (i, t) in self.data.truth.iter().enumerate() {
            let v = &volumes[i.min(volumes.len() - 1)];
            let range = if t.max() > 0.0 { t.max() } else { 1.0 };
            psnr.push(losses::psnr(v, t, range)?);
            if g.dims[0] >= losses::SSIM_WINDOW && g.dims[1] >= losses::SSIM_WINDOW {
                ssim.push(losses::ssim3d(v, t)?);
            }
        }
        Ok(Evaluation { volumes, psnr, ssim })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            grid: self.data.grid,
            gaussians: self.prims.clone(),
            field: self.field.clone(),
        }
    }

    /// Runs the remaining schedule, logging every iteration.
    pub fn run(mut self, checkpoint_dir: Option<&Path>) -> Result<TrainOutput> {
        let start = Instant::now();
        let total = self.cfg.schedule.total_iters;
        let mut metrics = Vec::with_capacity(total);
        let mut last_eval = None;
        while self.iteration < total {
            let terms = self.step()?;
            let k = self.iteration;
            let mut row = MetricsRow {
                iter: k,
                loss_total: total_loss(&terms, &self.cfg.weights),
                loss_l1: terms.l1,
                loss_dssim: terms.dssim,
                loss_tv: terms.tv,
                loss_sem: terms.sem,
                psnr: None,
                ssim: None,
                wall_time_s: 0.0,
            };
            let eval_due = k == total || (self.cfg.eval_every > 0 && k % self.cfg.eval_every == 0);
            if eval_due && !self.data.truth.is_empty() {
                let e = self.evaluate()?;
                row.psnr = e.mean_psnr();
                row.ssim = e.mean_ssim();
                log::info!("iter {k}: loss {:.5} psnr {:.3}", row.loss_total, row.psnr.unwrap_or(f64::NAN));
                if k == total {
                    last_eval = Some(e);
                }
            }
            if !self.cfg.deterministic {
                row.wall_time_s = start.elapsed().as_secs_f64();
            }
            metrics.push(row);
            if let Some(dir) = checkpoint_dir {
                if self.cfg.checkpoint_every > 0 && k % self.cfg.checkpoint_every == 0 {
                    self.checkpoint().save(&dir.join(format!("ckpt_{k:06}.tgf")))?;
                }
            }
        }
        let evaluation = match last_eval {
            Some(e) => e,
            None => self.evaluate()?,
        };
        Ok(TrainOutput {
            gaussians: self.prims,
            field: self.field,
            metrics,
            evaluation,
            iterations: self.iteration,
        })
    }
}

/// Trains on all views as one static scene; phase tags are ignored.
pub fn train_static(data: TrainData, init: &GaussianSet, cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutput> {
    Trainer::new(data, init, cfg.clone(), TrainMode::Static)?.run(checkpoint_dir)
}

/// Trains a phase-resolved model on phase-tagged projections.
pub fn train_dynamic(data: TrainData, init: &GaussianSet, cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutput> {
    let geom = &data.proj.geom;
    if !geom.is_dynamic() {
        return Err(Error::arg("train_dynamic requires phase-tagged projections"));
    }
    let mode = TrainMode::Dynamic { n_phases: geom.n_phases };
    Trainer::new(data, init, cfg.clone(), mode)?.run(checkpoint_dir)
}
