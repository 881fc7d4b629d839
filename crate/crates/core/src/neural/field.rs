//! The deformation field: hash encoder, four decoder heads and, for dynamic
//! scenes, attention over phases and a motion-flow refinement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::flow::MotionFlowNet;
use super::hash::{HashConfig, HashGrid};
use super::mlp::Mlp;
use super::splat::{PrimTensors, PrimVars};
use super::stab::Stab;
use super::tape::{ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::VolumeGrid;
use crate::gsplat::{GaussianSet, ScaleBounds};
use crate::linalg::{Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub hash: HashConfig,
    /// Width of every hidden layer of the decoder heads.
    pub head_hidden: usize,
    pub head_layers: usize,
    /// Attention over phases (dynamic mode only).
    pub stab: bool,
    /// Phases attended per primitive, centered on the query phase; `None`
    /// means all phases.
    pub stab_window: Option<usize>,
    /// Motion-flow refinement of centers (dynamic mode only).
    pub flow: bool,
    pub flow_rank: usize,
    pub flow_hidden: usize,
    pub flow_layers: usize,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            hash: HashConfig::default(),
            head_hidden: 64,
            head_layers: 2,
            stab: true,
            stab_window: None,
            flow: true,
            flow_rank: 2,
            flow_hidden: 64,
            flow_layers: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldMode {
    Static,
    Dynamic { n_phases: usize },
}

/// Per-primitive offsets produced by the decoder heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deltas {
    pub mu: Vec3,
    pub quat: Quat,
    pub log_scale: Vec3,
    pub rho_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHeads {
    pub mu: Mlp,
    pub quat: Mlp,
    pub scale: Mlp,
    pub rho: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub config: FieldConfig,
    pub mode: FieldMode,
    /// Defines the normalization of centers and the scale bounds.
    pub grid: VolumeGrid,
    pub params: ParamStore,
    pub hash: HashGrid,
    pub heads: DecoderHeads,
    pub stab: Option<Stab>,
    pub flow: Option<MotionFlowNet>,
}

impl DeformationField {
    /// Builds a fresh field whose output layers are zero, so it starts as the
    /// identity. Construction is deterministic in `config.seed`.
    pub fn new(config: FieldConfig, mode: FieldMode, grid: VolumeGrid) -> Result<Self> {
        grid.validate()?;
        if config.head_layers == 0 || config.head_hidden == 0 {
            return Err(Error::arg("field: head_layers and head_hidden must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (dim, n_phases) = match mode {
            FieldMode::Static => (3, 0),
            FieldMode::Dynamic { n_phases } => {
                if n_phases == 0 {
                    return Err(Error::arg("dynamic field needs n_phases >= 1"));
                }
                (4, n_phases)
            }
        };
        let hash = HashGrid::new(dim, config.hash, n_phases, &mut params, &mut rng)?;
        let width = hash.output_width();
        let mut head = |name: &str, out: usize, params: &mut ParamStore| {
            let mut widths = vec![width];
            widths.extend(std::iter::repeat(config.head_hidden).take(config.head_layers));
            widths.push(out);
            Mlp::new(params, name, &widths, ParamGroup::Decoder, &mut rng, true)
        };
        let heads = DecoderHeads {
            mu: head("head_mu", 3, &mut params)?,
            quat: head("head_quat", 4, &mut params)?,
            scale: head("head_scale", 3, &mut params)?,
            rho: head("head_rho", 1, &mut params)?,
        };
        let (stab, flow) = match mode {
            FieldMode::Static => (None, None),
            FieldMode::Dynamic { n_phases } => {
                let stab = if config.stab {
                    if let Some(w) = config.stab_window {
                        if w == 0 || w > n_phases {
                            return Err(Error::arg(format!("stab_window must be in 1..={n_phases}")));
                        }
                    }
                    Some(Stab::new(&mut params, width, &mut rng)?)
                } else {
                    None
                };
                let flow = if config.flow {
                    let hidden = vec![config.flow_hidden; config.flow_layers];
                    Some(MotionFlowNet::new(&mut params, &hidden, config.flow_rank, n_phases, &mut rng)?)
                } else {
                    None
                };
                (stab, flow)
            }
        };
        Ok(DeformationField {
            config,
            mode,
            grid,
            params,
            hash,
            heads,
            stab,
            flow,
        })
    }

    pub fn n_phases(&self) -> Option<usize> {
        match self.mode {
            FieldMode::Static => None,
            FieldMode::Dynamic { n_phases } => Some(n_phases),
        }
    }

    pub fn embedding_width(&self) -> usize {
        self.hash.output_width()
    }

    pub fn scale_bounds(&self) -> ScaleBounds {
        ScaleBounds::for_grid(&self.grid)
    }

    fn check_phase(&self, phase: Option<usize>) -> Result<()> {
        match (self.mode, phase) {
            (FieldMode::Static, None) => Ok(()),
            (FieldMode::Static, Some(_)) => Err(Error::arg("static field does not take a phase")),
            (FieldMode::Dynamic { .. }, None) => Err(Error::arg("dynamic field requires a phase")),
            (FieldMode::Dynamic { n_phases }, Some(p)) if p >= n_phases => {
                Err(Error::arg(format!("phase {p} out of range ({n_phases} phases)")))
            }
            _ => Ok(()),
        }
    }

    /// Maps world points into the unit cube of the field's grid.
    fn normalize<'a>(&self, tape: &mut Tape<'a>, x: Var) -> Var {
        let bb = self.grid.bbox();
        let scale: Vec<f64> = (0..3).map(|a| 1.0 / (bb.max[a] - bb.min[a])).collect();
        let shift: Vec<f64> = (0..3).map(|a| -bb.min[a] * scale[a]).collect();
        tape.scale_shift_cols(x, scale, &shift)
    }

    /// Phases attended for `phase`, and the row of the query phase among them.
    pub fn window(&self, phase: usize) -> (Vec<usize>, usize) {
        let n = self.n_phases().unwrap_or(1);
        let w = match self.stab {
            Some(_) => self.config.stab_window.unwrap_or(n),
            None => 1,
        };
        let half = w / 2;
        let phases = (0..w)
            .map(|j| (phase as i64 + j as i64 - half as i64).rem_euclid(n as i64) as usize)
            .collect();
        (phases, half)
    }

    fn embed<'a>(&'a self, tape: &mut Tape<'a>, mu: Var, phase: Option<usize>) -> Result<Var> {
        let xn = self.normalize(tape, mu);
        let Some(phase) = phase else {
            return self.hash.encode_tape(tape, &self.params, xn);
        };
        let n_phases = self.n_phases().unwrap_or(1) as f64;
        let (phases, query) = self.window(phase);
        let w = phases.len();
        let n = tape.value(mu).rows;
        let rep = tape.gather_rows(xn, (0..n).flat_map(|i| std::iter::repeat(i).take(w)).collect());
        let times = (0..n).flat_map(|_| phases.iter().map(|&p| p as f64 / n_phases)).collect();
        let t = tape.leaf(Tensor::new(n * w, 1, times));
        let coords = tape.concat_cols(&[rep, t]);
        let mut h = self.hash.encode_tape(tape, &self.params, coords)?;
        if let Some(stab) = &self.stab {
            h = stab.forward_tape(tape, &self.params, h, w)?;
        }
        Ok(tape.gather_rows(h, (0..n).map(|i| i * w + query).collect()))
    }

    /// Applies the field to primitive tensors on the tape, returning the
    /// deformed, finalized primitives.
    pub fn deform_tape<'a>(&'a self, tape: &mut Tape<'a>, p: &PrimVars, phase: Option<usize>) -> Result<PrimVars> {
        self.check_phase(phase)?;
        let h = self.embed(tape, p.mu, phase)?;
        let dmu = self.heads.mu.forward_tape(tape, &self.params, h);
        let dq = self.heads.quat.forward_tape(tape, &self.params, h);
        let ds = self.heads.scale.forward_tape(tape, &self.params, h);
        let drho = self.heads.rho.forward_tape(tape, &self.params, h);
        let mut mu = tape.add(p.mu, dmu);
        let quat = tape.add(p.quat, dq);
        let log_scale = tape.add(p.log_scale, ds);
        let rho_raw = tape.add(p.rho_raw, drho);
        if let (Some(flow), Some(phase)) = (&self.flow, phase) {
            let xn = self.normalize(tape, mu);
            let d = flow.forward_tape(tape, &self.params, xn, phase)?;
            mu = tape.add(mu, d);
        }
        Ok(finalize(
            tape,
            &PrimVars {
                mu,
                quat,
                log_scale,
                rho_raw,
            },
            self.scale_bounds(),
        ))
    }

    /// Deformed copy of `set`.
    pub fn deform(&self, set: &GaussianSet, phase: Option<usize>) -> Result<GaussianSet> {
        let prims = PrimTensors::from_set(set);
        let mut tape = Tape::new();
        let vars = PrimVars::leaves(&mut tape, &prims);
        let out = self.deform_tape(&mut tape, &vars, phase)?;
        Ok(out.values(&tape).to_set())
    }

    /// Evaluates the four heads on one embedding.
    pub fn decode_deform(&self, h: &[f64]) -> Result<Deltas> {
        if h.len() != self.embedding_width() {
            return Err(Error::arg(format!(
                "embedding width {} does not match field width {}",
                h.len(),
                self.embedding_width()
            )));
        }
        let x = Tensor::row_vector(h.to_vec());
        let mu = self.heads.mu.forward(&self.params, &x)?.data;
        let q = self.heads.quat.forward(&self.params, &x)?.data;
        let s = self.heads.scale.forward(&self.params, &x)?.data;
        let r = self.heads.rho.forward(&self.params, &x)?.data;
        Ok(Deltas {
            mu: [mu[0], mu[1], mu[2]],
            quat: [q[0], q[1], q[2], q[3]],
            log_scale: [s[0], s[1], s[2]],
            rho_raw: r[0],
        })
    }
}

/// Normalizes quaternions and clamps log-scales. Applied to every primitive
/// set before rendering, with or without a field.
pub fn finalize<'a>(tape: &mut Tape<'a>, p: &PrimVars, bounds: ScaleBounds) -> PrimVars {
    PrimVars {
        mu: p.mu,
        quat: tape.normalize_rows(p.quat),
        log_scale: tape.clamp(p.log_scale, bounds.min_log, bounds.max_log),
        rho_raw: p.rho_raw,
    }
}
