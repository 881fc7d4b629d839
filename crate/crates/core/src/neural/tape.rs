//! Reverse-mode automatic differentiation over row-major 2D tensors.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Fixed chunk count for parallel reductions, so sums do not depend on the
/// thread count.
const REDUCE_CHUNKS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor::new(rows, cols, vec![v; rows * cols])
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor::new(1, data.len(), data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "tensor shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · b`.
    pub fn matmul(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.rows, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, b.cols);
        gemm_rows(&self.data, (self.cols as isize, 1), &b.data, (b.cols as isize, 1), self.cols, b.cols, &mut out.data);
        out
    }

    /// `self · bᵀ`.
    pub fn matmul_nt(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.cols, "matmul_nt inner dimension mismatch");
        let mut out = Tensor::zeros(self.rows, b.rows);
        gemm_rows(&self.data, (self.cols as isize, 1), &b.data, (1, b.cols as isize), self.cols, b.rows, &mut out.data);
        out
    }

    /// `selfᵀ · b`, reduced over rows in fixed chunks.
    pub fn matmul_tn(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.rows, b.rows, "matmul_tn row mismatch");
        let (n, k, m) = (self.rows, self.cols, b.cols);
        let chunk = n.div_ceil(REDUCE_CHUNKS).max(1);
        let partials: Vec<Vec<f64>> = (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let rows = c * chunk..((c + 1) * chunk).min(n);
                let mut acc = vec![0.0; k * m];
                let a = &self.data[rows.start * k..rows.end * k];
                let g = &b.data[rows.start * m..rows.end * m];
                // SAFETY: `a` is (rows × k) and `g` is (rows × m), both row
                // major; `acc` is k × m. Strides stay inside the slices.
                unsafe {
                    matrixmultiply::dgemm(
                        k,
                        rows.len(),
                        m,
                        1.0,
                        a.as_ptr(),
                        1,
                        k as isize,
                        g.as_ptr(),
                        m as isize,
                        1,
                        0.0,
                        acc.as_mut_ptr(),
                        m as isize,
                        1,
                    );
                }
                acc
            })
            .collect();
        let mut out = Tensor::zeros(k, m);
        for p in partials {
            out.data.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Column sums as a `1 × cols` tensor.
    pub fn col_sums(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// `out = a · b` for row-major `out` with `m` columns, split into row
/// blocks. `a` has shape `out.rows × k`; strides are `(row, col)`.
fn gemm_rows(a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), k: usize, m: usize, out: &mut [f64]) {
    const BLOCK: usize = 256;
    if m == 0 || k == 0 {
        return;
    }
    out.par_chunks_mut(BLOCK * m).enumerate().for_each(|(i, o)| {
        let rows = o.len() / m;
        let a = &a[i * BLOCK * k..];
        // SAFETY: rows `i*BLOCK ..` of `a` hold `rows × k` entries at the
        // given strides, `b` is `k × m`, and `o` is `rows × m`.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                m,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                0.0,
                o.as_mut_ptr(),
                m as isize,
                1,
            );
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Optimizer group of a trainable tensor; each group has its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Position,
    Density,
    Scale,
    Rotation,
    Hash,
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Gradients keyed by parameter, allocated lazily on first write.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads {
    grads: BTreeMap<ParamId, Tensor>,
}

impl ParamGrads {
    pub fn entry(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Tensor {
        self.grads.entry(id).or_insert_with(|| Tensor::zeros(rows, cols))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.entry(id, g.rows, g.cols).add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }
}

/// A differentiable operation defined outside the tape.
pub trait CustomOp: Send + Sync {
    /// Gradients of the inputs given the output gradient; parameter gradients
    /// are accumulated into `params`.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, params: &mut ParamGrads)
        -> Vec<Option<Tensor>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    /// Input and its sigmoid.
    Silu(Var, Vec<f64>),
    ScaleShiftCols(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    NormalizeRows(Var),
    Clamp(Var, f64, f64),
    Custom(Vec<Var>, Box<dyn CustomOp + 'a>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
}

/// Records operations in execution order for one backward sweep.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf)
    }

    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf)
    }

    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(store.get(id)), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Cow::Owned(v), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Tensor::new(x.rows, x.cols, data);
        self.push(Cow::Owned(v), Op::Add(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert!(r.rows == 1 && r.cols == x.cols, "add_row shape mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            v.row_mut(i).iter_mut().zip(&r.data).for_each(|(o, b)| *o += b);
        }
        self.push(Cow::Owned(v), Op::AddRow(a, row))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sig: Vec<f64> = x.data.iter().map(|&v| crate::linalg::sigmoid(v)).collect();
        let v = Tensor::new(x.rows, x.cols, x.data.iter().zip(&sig).map(|(v, s)| v * s).collect());
        self.push(Cow::Owned(v), Op::Silu(a, sig))
    }

    /// `y[:, c] = x[:, c]·scale[c] + shift[c]`.
    pub fn scale_shift_cols(&mut self, a: Var, scale: Vec<f64>, shift: &[f64]) -> Var {
        let x = self.value(a);
        assert!(scale.len() == x.cols && shift.len() == x.cols, "scale_shift_cols width mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (c, o) in v.row_mut(i).iter_mut().enumerate() {
                *o = *o * scale[c] + shift[c];
            }
        }
        self.push(Cow::Owned(v), Op::ScaleShiftCols(a, scale))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        assert!(parts.iter().all(|&p| self.value(p).rows == rows), "concat row mismatch");
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                v.data[i * cols + off..i * cols + off + src.cols].copy_from_slice(src.row(i));
                off += src.cols;
            }
        }
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(start + width <= x.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(x.rows, width);
        for i in 0..x.rows {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + width]);
        }
        self.push(Cow::Owned(v), Op::SliceCols(a, start))
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut v = Tensor::zeros(index.len(), x.cols);
        for (i, &r) in index.iter().enumerate() {
            v.row_mut(i).copy_from_slice(x.row(r));
        }
        self.push(Cow::Owned(v), Op::GatherRows(a, index))
    }

    /// Scales every row to unit Euclidean norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            let r = v.row_mut(i);
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                r.iter_mut().for_each(|x| *x /= n);
            }
        }
        self.push(Cow::Owned(v), Op::NormalizeRows(a))
    }

    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = self.value(a);
        let v = Tensor::new(x.rows, x.cols, x.data.iter().map(|v| v.clamp(lo, hi)).collect());
        self.push(Cow::Owned(v), Op::Clamp(a, lo, hi))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp + 'a>) -> Var {
        self.push(Cow::Owned(value), Op::Custom(inputs.to_vec(), op))
    }

    /// Propagates the given output gradients back to every node.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params = ParamGrads::default();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(*v).shape(), "seed shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul_nt(w));
                    accumulate(&mut grads, *b, x.matmul_tn(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *r, g.col_sums());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Silu(a, sig) => {
                    let x = self.value(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(sig)
                        .zip(&g.data)
                        .map(|((&v, &s), &g)| g * (s + v * s * (1.0 - s)))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.rows, x.cols, data));
                }
                Op::ScaleShiftCols(a, scale) => {
                    let mut d = g.clone();
                    for i in 0..d.rows {
                        d.row_mut(i).iter_mut().zip(scale).for_each(|(o, s)| *o *= s);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut d = Tensor::zeros(g.rows, w);
                        for i in 0..g.rows {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        d.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::GatherRows(a, index) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for (i, &r) in index.iter().enumerate() {
                        d.row_mut(r).iter_mut().zip(g.row(i)).for_each(|(o, v)| *o += v);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        let n = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let yg: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                        for c in 0..x.cols {
                            d.data[i * x.cols + c] = (g.get(i, c) - y.get(i, c) * yg) / n;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(v, g)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.rows, x.cols, data));
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let dins = op.backward(&ins, &node.value, &g, &mut params);
                    assert_eq!(dins.len(), inputs.len(), "custom op returned wrong gradient count");
                    for (&v, d) in inputs.iter().zip(dins) {
                        if let Some(d) = d {
                            accumulate(&mut grads, v, d);
                        }
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { nodes: grads, params }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward sweep: gradients of leaves and of parameters.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::leaf`] or [`Tape::leaf_ref`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id)
    }
}
