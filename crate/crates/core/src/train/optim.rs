//! Adam with per-group learning rates decaying exponentially to 10%.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::ParamGroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub density: f64,
    pub scale: f64,
    pub rotation: f64,
    pub hash: f64,
    pub decoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-4,
            density: 1e-2,
            scale: 5e-3,
            rotation: 1e-3,
            hash: 2e-3,
            decoder: 2e-4,
        }
    }
}

impl LearningRates {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => self.position,
            ParamGroup::Density => self.density,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Hash => self.hash,
            ParamGroup::Decoder => self.decoder,
        }
    }

    fn all(&self) -> [f64; 6] {
        [self.position, self.density, self.scale, self.rotation, self.hash, self.decoder]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSchedule {
    pub lr: LearningRates,
    pub total_iters: usize,
    pub warmup_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimSchedule {
    fn default() -> Self {
        OptimSchedule {
            lr: LearningRates::default(),
            total_iters: 30000,
            warmup_iters: 5000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

impl OptimSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.lr.all().iter().any(|&r| !(r > 0.0)) {
            return Err(Error::arg("learning rates must be positive"));
        }
        if self.total_iters == 0 || self.warmup_iters > self.total_iters {
            return Err(Error::arg("schedule needs total_iters >= 1 and warmup_iters <= total_iters"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::arg("adam betas must lie in [0,1) and eps must be positive"));
        }
        Ok(())
    }

    /// `lr₀(g) · 0.1^(k / total_iters)`.
    pub fn lr_at(&self, group: ParamGroup, k: usize) -> f64 {
        self.lr.get(group) * 0.1f64.powf(k as f64 / self.total_iters as f64)
    }
}

/// Moment estimates of one parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, sched: &OptimSchedule) {
    assert_eq!(param.len(), grad.len(), "adam: gradient length mismatch");
    if state.m.len() != param.len() {
        *state = AdamState::new(param.len());
    }
    state.steps += 1;
    let (b1, b2) = (sched.beta1, sched.beta2);
    let c1 = 1.0 - b1.powi(state.steps as i32);
    let c2 = 1.0 - b2.powi(state.steps as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        param[i] -= lr * mh / (vh.sqrt() + sched.eps);
    }
}
