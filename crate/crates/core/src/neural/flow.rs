//! Motion-flow network with time-varying residual weights: every layer uses
//! `W(t) = W_base + Σ_r c_r(t)·W_r`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tape::{CustomOp, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct ResLinear {
    pub w: ParamId,
    pub residuals: Vec<ParamId>,
    /// `n_phases × rank`; absent when the rank is zero.
    pub coeff: Option<ParamId>,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFlowNet {
    pub n_phases: usize,
    pub rank: usize,
    pub layers: Vec<ResLinear>,
}

impl MotionFlowNet {
    /// Maps a normalized 3D point to a displacement through `hidden` layers.
    /// Base output weights and all phase coefficients start at zero.
    pub fn new(store: &mut ParamStore, hidden: &[usize], rank: usize, n_phases: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n_phases == 0 || hidden.contains(&0) {
            return Err(Error::arg("motion flow: n_phases and hidden widths must be >= 1"));
        }
        let mut widths = vec![3];
        widths.extend_from_slice(hidden);
        widths.push(3);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (i, o) = (widths[l], widths[l + 1]);
                let std = (1.0 / i as f64).sqrt();
                let randn = |rng: &mut ChaCha8Rng| -> Tensor {
                    Tensor::new(i, o, (0..i * o).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect())
                };
                let base = if l + 1 == n { Tensor::zeros(i, o) } else { randn(rng) };
                let w = store.add(format!("flow.{l}.w"), ParamGroup::Decoder, base);
                let residuals = (0..rank)
                    .map(|r| store.add(format!("flow.{l}.res{r}"), ParamGroup::Decoder, randn(rng)))
                    .collect();
                let coeff =
                    (rank > 0).then(|| store.add(format!("flow.{l}.coeff"), ParamGroup::Decoder, Tensor::zeros(n_phases, rank)));
                let b = store.add(format!("flow.{l}.b"), ParamGroup::Decoder, Tensor::zeros(1, o));
                ResLinear {
                    w,
                    residuals,
                    coeff,
                    b,
                    inputs: i,
                    outputs: o,
                }
            })
            .collect();
        Ok(MotionFlowNet { n_phases, rank, layers })
    }

    fn check_phase(&self, phase: usize) -> Result<()> {
        if phase >= self.n_phases {
            return Err(Error::arg(format!("phase {phase} out of range ({} phases)", self.n_phases)));
        }
        Ok(())
    }

    /// Displacements for the rows of `x` (`n × 3`), all at `phase`.
    pub fn forward_tape<'a>(&'a self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var, phase: usize) -> Result<Var> {
        self.check_phase(phase)?;
        if tape.value(x).cols != 3 {
            return Err(Error::arg("motion flow expects 3 input columns"));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w_eff = effective_weight(layer, store, phase);
            let xin = tape.value(h);
            let mut out = xin.matmul(&w_eff);
            let b = store.get(layer.b);
            for r in 0..out.rows {
                out.row_mut(r).iter_mut().zip(&b.data).for_each(|(o, b)| *o += b);
            }
            h = tape.custom(
                &[h],
                out,
                Box::new(ResLinearOp {
                    layer,
                    store,
                    phase,
                    w_eff,
                }),
            );
            if i + 1 < self.layers.len() {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }

    pub fn displacement(&self, store: &ParamStore, point: Vec3, phase: usize) -> Result<Vec3> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(point.to_vec()));
        let out = self.forward_tape(&mut tape, store, x, phase)?;
        let d = &tape.value(out).data;
        Ok([d[0], d[1], d[2]])
    }
}

fn effective_weight(layer: &ResLinear, store: &ParamStore, phase: usize) -> Tensor {
    let mut w = store.get(layer.w).clone();
    if let Some(cid) = layer.coeff {
        let c = store.get(cid);
        for (r, &rid) in layer.residuals.iter().enumerate() {
            let cr = c.get(phase, r);
            w.data.iter_mut().zip(&store.get(rid).data).for_each(|(a, b)| *a += cr * b);
        }
    }
    w
}

struct ResLinearOp<'a> {
    layer: &'a ResLinear,
    store: &'a ParamStore,
    phase: usize,
    w_eff: Tensor,
}

impl CustomOp for ResLinearOp<'_> {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, params: &mut ParamGrads) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let l = self.layer;
        let dw = x.matmul_tn(grad);
        params.accumulate(l.w, &dw);
        params.accumulate(l.b, &grad.col_sums());
        if let Some(cid) = l.coeff {
            let c = self.store.get(cid);
            let rank = l.residuals.len();
            let dc = params.entry(cid, c.rows, c.cols);
            for (r, &rid) in l.residuals.iter().enumerate() {
                let wr = self.store.get(rid);
                dc.data[self.phase * rank + r] += wr.data.iter().zip(&dw.data).map(|(a, b)| a * b).sum::<f64>();
            }
            for (r, &rid) in l.residuals.iter().enumerate() {
                params.accumulate(rid, &dw.scaled(c.get(self.phase, r)));
            }
        }
        vec![Some(grad.matmul_nt(&self.w_eff))]
    }
}
