//! Multi-resolution hash grid encoding in three or four dimensions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::tape::{CustomOp, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const HASH_PRIMES: [u64; 4] = [73856093, 19349663, 83492791, 2654435761];
const INIT_RANGE: f64 = 1e-4;
const MAX_CORNERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HashConfig {
    pub levels: usize,
    pub features_per_level: usize,
    /// Entries per level are `2^table_size_log2`.
    pub table_size_log2: u32,
    pub base_res: usize,
    pub max_res: usize,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig {
            levels: 8,
            features_per_level: 2,
            table_size_log2: 17,
            base_res: 8,
            max_res: 128,
        }
    }
}

impl HashConfig {
    /// Per-level spatial resolutions, a geometric progression from
    /// `base_res` to `max_res`.
    pub fn resolutions(&self) -> Result<Vec<usize>> {
        if self.levels == 0 || self.features_per_level == 0 || self.base_res == 0 {
            return Err(Error::arg("hash grid: levels, features_per_level and base_res must be >= 1"));
        }
        if !(1..=26).contains(&self.table_size_log2) {
            return Err(Error::arg("hash grid: table_size_log2 must be in 1..=26"));
        }
        if self.levels == 1 {
            return Ok(vec![self.base_res]);
        }
        if self.max_res <= self.base_res {
            return Err(Error::arg("hash grid: max_res must exceed base_res when levels > 1"));
        }
        let growth = ((self.max_res as f64).ln() - (self.base_res as f64).ln()) / (self.levels - 1) as f64;
        let res: Vec<usize> = (0..self.levels)
            .map(|l| (self.base_res as f64 * (growth * l as f64).exp() + 1e-9).floor() as usize)
            .collect();
        if res.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg(format!(
                "hash grid: resolutions {res:?} are not strictly increasing; widen max_res or use fewer levels"
            )));
        }
        Ok(res)
    }

    pub fn output_width(&self) -> usize {
        self.levels * self.features_per_level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    pub dim: usize,
    pub config: HashConfig,
    pub resolutions: Vec<usize>,
    /// Lattice resolution along time for 4D grids.
    pub time_res: usize,
    /// `(levels · 2^table_size_log2) × features_per_level`.
    pub table: ParamId,
    dense: Vec<bool>,
}

struct Corners {
    n: usize,
    rows: [usize; MAX_CORNERS],
    weights: [f64; MAX_CORNERS],
    /// `∂weight/∂coord` per corner and axis.
    dweights: [[f64; 4]; MAX_CORNERS],
}

impl HashGrid {
    /// `time_res` is ignored for `dim == 3`.
    pub fn new(dim: usize, config: HashConfig, time_res: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim != 3 && dim != 4 {
            return Err(Error::arg(format!("hash grid dimension must be 3 or 4, got {dim}")));
        }
        if dim == 4 && time_res == 0 {
            return Err(Error::arg("4D hash grid needs time_res >= 1"));
        }
        let resolutions = config.resolutions()?;
        let t = 1usize << config.table_size_log2;
        let dense = resolutions
            .iter()
            .map(|&r| {
                let spatial = (r as u128 + 1).pow(3);
                let total = if dim == 4 { spatial * (time_res as u128 + 1) } else { spatial };
                total <= t as u128
            })
            .collect();
        let n = config.levels * t * config.features_per_level;
        let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
        let table = store.add(
            format!("hash{dim}d.table"),
            ParamGroup::Hash,
            Tensor::new(config.levels * t, config.features_per_level, data),
        );
        Ok(HashGrid {
            dim,
            config,
            resolutions,
            time_res: if dim == 4 { time_res } else { 0 },
            table,
            dense,
        })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    pub fn table_size(&self) -> usize {
        1 << self.config.table_size_log2
    }

    pub fn is_dense(&self, level: usize) -> bool {
        self.dense[level]
    }

    fn axis_res(&self, level: usize, axis: usize) -> usize {
        if axis == 3 {
            self.time_res
        } else {
            self.resolutions[level]
        }
    }

    /// Row of the table holding lattice vertex `c` at `level`.
    pub fn vertex_row(&self, level: usize, c: &[usize]) -> usize {
        let t = self.table_size();
        let idx = if self.dense[level] {
            let mut idx = 0usize;
            let mut stride = 1usize;
            for (a, &ca) in c.iter().enumerate() {
                idx += ca * stride;
                stride *= self.axis_res(level, a) + 1;
            }
            idx
        } else {
            let h = c
                .iter()
                .zip(HASH_PRIMES)
                .fold(0u64, |h, (&ca, p)| h ^ (ca as u64).wrapping_mul(p));
            (h & (t as u64 - 1)) as usize
        };
        level * t + idx
    }

    fn corners(&self, level: usize, x: &[f64]) -> Corners {
        let dim = self.dim;
        let mut cell = [0usize; 4];
        let mut frac = [0.0; 4];
        let mut scale = [0.0; 4];
        for a in 0..dim {
            let r = self.axis_res(level, a);
            let inside = (0.0..=1.0).contains(&x[a]);
            let pos = x[a].clamp(0.0, 1.0) * r as f64;
            let c = (pos.floor() as usize).min(r - 1);
            cell[a] = c;
            frac[a] = pos - c as f64;
            scale[a] = if inside { r as f64 } else { 0.0 };
        }
        let n = 1 << dim;
        let mut out = Corners {
            n,
            rows: [0; MAX_CORNERS],
            weights: [0.0; MAX_CORNERS],
            dweights: [[0.0; 4]; MAX_CORNERS],
        };
        let mut c = [0usize; 4];
        for k in 0..n {
            let mut w = 1.0;
            let mut fac = [0.0; 4];
            for a in 0..dim {
                let bit = (k >> a) & 1;
                c[a] = cell[a] + bit;
                fac[a] = if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                w *= fac[a];
            }
            for a in 0..dim {
                let mut d = if (k >> a) & 1 == 1 { 1.0 } else { -1.0 };
                for (b, f) in fac.iter().enumerate().take(dim) {
                    if b != a {
                        d *= f;
                    }
                }
                out.dweights[k][a] = d * scale[a];
            }
            out.rows[k] = self.vertex_row(level, &c[..dim]);
            out.weights[k] = w;
        }
        out
    }

    /// Encodes `coords` (`n × dim`, normalized to `[0,1]`, clamped otherwise)
    /// into `n × (levels · features)`, levels in ascending resolution.
    pub fn encode(&self, store: &ParamStore, coords: &Tensor) -> Result<Tensor> {
        if coords.cols != self.dim {
            return Err(Error::arg(format!(
                "hash encode expects {} coordinates per row, got {}",
                self.dim, coords.cols
            )));
        }
        Ok(self.encode_unchecked(store.get(self.table), coords))
    }

    fn encode_unchecked(&self, table: &Tensor, coords: &Tensor) -> Tensor {
        let (l, c) = (self.config.levels, self.config.features_per_level);
        let width = l * c;
        let mut out = Tensor::zeros(coords.rows, width);
        out.data.par_chunks_mut(width).enumerate().for_each(|(i, o)| {
            let x = coords.row(i);
            for level in 0..l {
                let k = self.corners(level, x);
                let dst = &mut o[level * c..(level + 1) * c];
                for j in 0..k.n {
                    let w = k.weights[j];
                    if w == 0.0 {
                        continue;
                    }
                    for (d, f) in dst.iter_mut().zip(table.row(k.rows[j])) {
                        *d += w * f;
                    }
                }
            }
        });
        out
    }

    /// Single-point convenience wrapper around [`HashGrid::encode`].
    pub fn encode_point(&self, store: &ParamStore, coord: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(store, &Tensor::row_vector(coord.to_vec()))?.data)
    }

    pub fn encode_tape<'a>(&'a self, tape: &mut Tape<'a>, store: &'a ParamStore, coords: Var) -> Result<Var> {
        let x = tape.value(coords);
        if x.cols != self.dim {
            return Err(Error::arg(format!(
                "hash encode expects {} coordinates per row, got {}",
                self.dim, x.cols
            )));
        }
        let table = store.get(self.table);
        let out = self.encode_unchecked(table, x);
        Ok(tape.custom(&[coords], out, Box::new(HashOp { grid: self, table })))
    }
}

struct HashOp<'a> {
    grid: &'a HashGrid,
    table: &'a Tensor,
}

impl CustomOp for HashOp<'_> {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, params: &mut ParamGrads) -> Vec<Option<Tensor>> {
        let g = self.grid;
        let coords = inputs[0];
        let (l, c) = (g.config.levels, g.config.features_per_level);
        let dim = g.dim;
        let dtable = params.entry(g.table, self.table.rows, self.table.cols);
        for i in 0..coords.rows {
            let x = coords.row(i);
            let go = grad.row(i);
            for level in 0..l {
                let k = g.corners(level, x);
                let gl = &go[level * c..(level + 1) * c];
                for j in 0..k.n {
                    let w = k.weights[j];
                    if w == 0.0 {
                        continue;
                    }
                    for (d, gv) in dtable.row_mut(k.rows[j]).iter_mut().zip(gl) {
                        *d += w * gv;
                    }
                }
            }
        }
        let mut dx = Tensor::zeros(coords.rows, dim);
        dx.data.par_chunks_mut(dim).enumerate().for_each(|(i, d)| {
            let x = coords.row(i);
            let go = grad.row(i);
            for level in 0..l {
                let k = g.corners(level, x);
                let gl = &go[level * c..(level + 1) * c];
                for j in 0..k.n {
                    let s: f64 = self.table.row(k.rows[j]).iter().zip(gl).map(|(f, g)| f * g).sum();
                    for a in 0..dim {
                        d[a] += s * k.dweights[j][a];
                    }
                }
            }
        });
        vec![Some(dx)]
    }
}
