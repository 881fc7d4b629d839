//! Small fully connected networks with SiLU hidden activations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tape::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub w: ParamId,
    /// `1 × out`.
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, group: ParamGroup, rng: &mut ChaCha8Rng, zero: bool) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| if zero { 0.0 } else { std * rng.sample::<f64, _>(StandardNormal) })
            .collect();
        let w = store.add(format!("{name}.w"), group, Tensor::new(inputs, outputs, data));
        let b = store.add(format!("{name}.b"), group, Tensor::zeros(1, outputs));
        Linear { w, b, inputs, outputs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`; the last layer starts at zero when
    /// `zero_output` is set.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], group: ParamGroup, rng: &mut ChaCha8Rng, zero_output: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::arg(format!("mlp {name}: need at least two nonzero widths, got {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                Linear::new(
                    store,
                    &format!("{name}.{l}"),
                    widths[l],
                    widths[l + 1],
                    group,
                    rng,
                    zero_output && l + 1 == n,
                )
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward_tape<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.param(store, l.w);
            let b = tape.param(store, l.b);
            h = tape.matmul(h, w);
            h = tape.add_row(h, b);
            if i + 1 < self.layers.len() {
                h = tape.silu(h);
            }
        }
        h
    }

    /// Evaluates the network on the rows of `x`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.cols != self.input_width() {
            return Err(Error::arg(format!(
                "mlp expects width {}, got {}",
                self.input_width(),
                x.cols
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.leaf_ref(x);
        let out = self.forward_tape(&mut tape, store, xv);
        Ok(tape.value(out).clone())
    }
}
