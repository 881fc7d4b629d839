//! Spatiotemporal attention: residual scaled dot-product attention over one
//! primitive's embeddings across phases.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tape::{CustomOp, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stab {
    pub width: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

impl Stab {
    pub fn new(store: &mut ParamStore, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if width == 0 {
            return Err(Error::arg("stab width must be >= 1"));
        }
        let std = (1.0 / width as f64).sqrt();
        let mut mat = |name: &str, store: &mut ParamStore| {
            let data = (0..width * width).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
            store.add(format!("stab.{name}"), ParamGroup::Decoder, Tensor::new(width, width, data))
        };
        let w_q = mat("w_q", store);
        let w_k = mat("w_k", store);
        let w_v = mat("w_v", store);
        Ok(Stab { width, w_q, w_k, w_v })
    }

    /// `h` stacks `window` consecutive rows per primitive; returns
    /// `h + softmax(QKᵀ/√C′)V` computed blockwise.
    pub fn forward_tape<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, h: Var, window: usize) -> Result<Var> {
        let x = tape.value(h);
        if x.cols != self.width {
            return Err(Error::arg(format!("stab expects width {}, got {}", self.width, x.cols)));
        }
        if window == 0 || x.rows % window != 0 {
            return Err(Error::arg(format!("stab: {} rows are not a multiple of window {window}", x.rows)));
        }
        let wq = tape.param(store, self.w_q);
        let wk = tape.param(store, self.w_k);
        let wv = tape.param(store, self.w_v);
        let q = tape.matmul(h, wq);
        let k = tape.matmul(h, wk);
        let v = tape.matmul(h, wv);
        let (out, _) = attention(tape.value(q), tape.value(k), tape.value(v), window);
        let a = tape.custom(&[q, k, v], out, Box::new(AttentionOp { window }));
        Ok(tape.add(h, a))
    }

    /// Recalibrates one primitive's `T × C′` embedding matrix.
    pub fn recalibrate(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let hv = tape.leaf_ref(h);
        let out = self.forward_tape(&mut tape, store, hv, h.rows)?;
        Ok(tape.value(out).clone())
    }

    /// Row-stochastic `T × T` attention weights for one primitive.
    pub fn attention_weights(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        if h.cols != self.width || h.rows == 0 {
            return Err(Error::arg("stab: embedding shape mismatch"));
        }
        let q = h.matmul(store.get(self.w_q));
        let k = h.matmul(store.get(self.w_k));
        let v = h.matmul(store.get(self.w_v));
        Ok(attention(&q, &k, &v, h.rows).1)
    }
}

/// Blockwise attention output and the stacked softmax weights.
fn attention(q: &Tensor, k: &Tensor, v: &Tensor, window: usize) -> (Tensor, Tensor) {
    let c = q.cols;
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = Tensor::zeros(q.rows, c);
    let mut probs = Tensor::zeros(q.rows, window);
    for b in 0..q.rows / window {
        let base = b * window;
        for i in 0..window {
            let qi = q.row(base + i);
            let p = probs.row_mut(base + i);
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = scale * qi.iter().zip(k.row(base + j)).map(|(a, b)| a * b).sum::<f64>();
            }
            let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for pj in p.iter_mut() {
                *pj = (*pj - m).exp();
                s += *pj;
            }
            p.iter_mut().for_each(|pj| *pj /= s);
            let p = probs.row(base + i).to_vec();
            let o = out.row_mut(base + i);
            for (j, pj) in p.iter().enumerate() {
                for (o, vv) in o.iter_mut().zip(v.row(base + j)) {
                    *o += pj * vv;
                }
            }
        }
    }
    (out, probs)
}

struct AttentionOp {
    window: usize,
}

impl CustomOp for AttentionOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &mut ParamGrads) -> Vec<Option<Tensor>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let w = self.window;
        let c = q.cols;
        let scale = 1.0 / (c as f64).sqrt();
        let (_, probs) = attention(q, k, v, w);
        let mut dq = Tensor::zeros(q.rows, c);
        let mut dk = Tensor::zeros(q.rows, c);
        let mut dv = Tensor::zeros(q.rows, c);
        for b in 0..q.rows / w {
            let base = b * w;
            for i in 0..w {
                let p = probs.row(base + i);
                let go = grad.row(base + i);
                let dp: Vec<f64> = (0..w)
                    .map(|j| go.iter().zip(v.row(base + j)).map(|(a, b)| a * b).sum())
                    .collect();
                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..w {
                    for (d, g) in dv.row_mut(base + j).iter_mut().zip(go) {
                        *d += p[j] * g;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = k.row(base + j).to_vec();
                    for (d, kk) in dq.row_mut(base + i).iter_mut().zip(&kj) {
                        *d += ds * kk;
                    }
                    let qi = q.row(base + i).to_vec();
                    for (d, qq) in dk.row_mut(base + j).iter_mut().zip(&qi) {
                        *d += ds * qq;
                    }
                }
            }
        }
        vec![Some(dq), Some(dk), Some(dv)]
    }
}
