//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough context to run
//! its backward rule. Nodes are only ever appended, so the node list is
//! already in topological order and the backward sweep is a reverse scan.

use log::warn;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Guard used by [`Graph::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Exp,
    Log,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var, Option<Vec<bool>>),
    L2NormalizeRows(Var, Vec<f64>),
    StridedGather { x: Var, offset: usize, stride: usize },
    SliceCols { x: Var, start: usize },
    GatherCols { x: Var, idx: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    IndexAddRows { x: Var, idx: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Reduce { x: Var, kind: Reduce, axis: Option<usize> },
    Conv1d { x: Var, w: Var, b: Var },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Operation tape. Build it with the forward ops, then consume it with
/// [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` does not require
    /// gradients or is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err<T>(msg: String) -> Result<T> {
    Err(Error::Dimension(msg))
}

/// outer, extent, inner split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::MulCol(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Unary(x, _)
            | Op::SoftmaxRows(x)
            | Op::LogSoftmaxRows(x, _)
            | Op::L2NormalizeRows(x, _)
            | Op::Reshape(x) => vec![*x],
            Op::StridedGather { x, .. }
            | Op::SliceCols { x, .. }
            | Op::GatherCols { x, .. }
            | Op::GatherRows { x, .. }
            | Op::IndexAddRows { x, .. }
            | Op::Reduce { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Conv1d { x, w, b } => vec![*x, *w, *b],
        }
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    // ----- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return dim_err(format!("matmul inner extents differ: {m}x{k} · {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("add shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add")
    }

    /// `x[m×n] + bias[n]`, bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(bias).numel() != n {
            return dim_err(format!("bias of {} values for {m}x{n} input", self.value(bias).numel()));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(x, bias), "add_row")
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("mul shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// Scales row `i` of `x[m×n]` by `col[i]` (`col` has `m` values).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(col).numel() != m {
            return dim_err(format!("column of {} values for {m}x{n} input", self.value(col).numel()));
        }
        let c = self.value(col).data();
        let mut data = self.value(x).data().to_vec();
        for (row, cv) in data.chunks_mut(n).zip(c) {
            row.iter_mut().for_each(|v| *v *= cv);
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::MulCol(x, col), "mul_col")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Scale(x, factor), "scale")
    }

    // ----- pointwise ------------------------------------------------------

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let src = self.value(x).data();
        let data: Vec<f64> = match kind {
            Unary::Sigmoid => src.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Relu => src.iter().map(|&v| v.max(0.0)).collect(),
            Unary::Exp => src.iter().map(|v| v.exp()).collect(),
            Unary::Neg => src.iter().map(|v| -v).collect(),
            Unary::Log => {
                if let Some(bad) = src.iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                src.iter().map(|v| v.ln()).collect()
            }
        };
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Unary(x, kind), "elementwise")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Neg)
    }

    // ----- row-wise normalizations ---------------------------------------

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::SoftmaxRows(x), "softmax_rows")
    }

    /// Row-wise log-softmax. When `mask` is given (row-major, same shape as
    /// `x`) only masked-in entries take part in each row's normalizer, and
    /// masked-out outputs are 0 with zero gradient. Rows with no masked-in
    /// entry are all zeros.
    pub fn log_softmax_rows(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if let Some(mk) = &mask {
            if mk.len() != m * n {
                return dim_err(format!("mask of {} entries for {m}x{n} input", mk.len()));
            }
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let keep = |j: usize| mask.as_ref().map_or(true, |mk| mk[i * n + j]);
            let max = (0..n).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let z: f64 = (0..n).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
            let lse = max + z.ln();
            for j in (0..n).filter(|&j| keep(j)) {
                data[i * n + j] = row[j] - lse;
            }
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::LogSoftmaxRows(x, mask), "log_softmax_rows")
    }

    /// Divides each row by `max(‖row‖₂, 1e-12)`. All-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let mut data = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(m);
        for (i, row) in data.chunks_mut(n).enumerate() {
            let raw = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if raw <= NORM_EPS {
                warn!("l2_normalize_rows: row {i} has degenerate norm {raw:e}");
            }
            let norm = raw.max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::L2NormalizeRows(x, norms), "l2_normalize_rows")
    }

    // ----- indexing -------------------------------------------------------

    /// Columns `offset, offset+stride, …` of a matrix.
    pub fn strided_gather(&mut self, x: Var, offset: usize, stride: usize) -> Result<Var> {
        let (m, t) = self.dims2(x)?;
        if stride == 0 {
            return Err(Error::Argument("stride must be positive".into()));
        }
        if offset >= stride || stride > t {
            return Err(Error::Argument(format!(
                "strided_gather needs offset < stride <= T, got offset {offset}, stride {stride}, T {t}"
            )));
        }
        let w = (t - offset).div_ceil(stride);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend((0..w).map(|c| src[i * t + offset + c * stride]));
        }
        self.push(Tensor::new(vec![m, w], data)?, Op::StridedGather { x, offset, stride }, "strided_gather")
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if len == 0 || start + len > n {
            return dim_err(format!("column slice {start}..{} of {n} columns", start + len));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { x, start }, "slice_cols")
    }

    /// `out[:, c] = x[:, idx[c]]`.
    pub fn gather_cols(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if idx.is_empty() || idx.iter().any(|&c| c >= n) {
            return dim_err(format!("column index out of range for {n} columns"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * idx.len());
        for i in 0..m {
            data.extend(idx.iter().map(|&c| src[i * n + c]));
        }
        let w = idx.len();
        self.push(Tensor::new(vec![m, w], data)?, Op::GatherCols { x, idx }, "gather_cols")
    }

    /// `out[r, :] = x[idx[r], :]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if idx.is_empty() || idx.iter().any(|&r| r >= m) {
            return dim_err(format!("row index out of range for {m} rows"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &r in &idx {
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let rows = idx.len();
        self.push(Tensor::new(vec![rows, n], data)?, Op::GatherRows { x, idx }, "gather_rows")
    }

    /// `out[idx[r], :] += x[r, :]` into a zero matrix with `rows` rows.
    pub fn index_add_rows(&mut self, x: Var, idx: Vec<usize>, rows: usize) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if idx.len() != m || idx.iter().any(|&r| r >= rows) {
            return dim_err(format!("index_add_rows: {} indices for {m} rows into {rows}", idx.len()));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; rows * n];
        for (r, &dst) in idx.iter().enumerate() {
            let out = &mut data[dst * n..(dst + 1) * n];
            for (o, v) in out.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *o += v;
            }
        }
        self.push(Tensor::new(vec![rows, n], data)?, Op::IndexAddRows { x, idx }, "index_add_rows")
    }

    // ----- shape ----------------------------------------------------------

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Argument("concat of no tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Argument(format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return dim_err(format!("concat extents differ: {s:?} vs {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let ext = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Concat { xs: xs.to_vec(), axis }, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// Sum or mean over `axis`, or over everything when `axis` is `None`.
    /// The reduced axis is dropped; a fully reduced result has shape `[1]`.
    pub fn reduce(&mut self, x: Var, kind: Reduce, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let src = self.value(x).data();
        let (t, count) = match axis {
            None => {
                let s: f64 = src.iter().sum();
                (Tensor::scalar(s), src.len())
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::Argument(format!("axis {ax} out of range for {shape:?}")));
                }
                let (outer, ext, inner) = split_axis(&shape, ax);
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for e in 0..ext {
                        let base = (o * ext + e) * inner;
                        for i in 0..inner {
                            data[o * inner + i] += src[base + i];
                        }
                    }
                }
                let mut out_shape: Vec<usize> = shape.clone();
                out_shape.remove(ax);
                if out_shape.is_empty() {
                    out_shape.push(1);
                }
                (Tensor::new(out_shape, data)?, ext)
            }
        };
        let t = match kind {
            Reduce::Sum => t,
            Reduce::Mean => {
                let mut t = t;
                t.data_mut().iter_mut().for_each(|v| *v /= count as f64);
                t
            }
        };
        self.push(t, Op::Reduce { x, kind, axis }, "reduce")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduce::Sum, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduce::Mean, None)
    }

    // ----- convolution ----------------------------------------------------

    /// Valid, stride-1 cross-correlation. `x` is `C_in×T` or `B×C_in×T`,
    /// `w` is `C_out×C_in×K`, `b` has `C_out` values.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, t, batched) = match xs[..] {
            [c, t] => (1, c, t, false),
            [bt, c, t] => (bt, c, t, true),
            _ => return dim_err(format!("conv1d input must be 2-D or 3-D, got {xs:?}")),
        };
        let (c_out, k) = match self.shape(w)[..] {
            [o, i, k] if i == c_in => (o, k),
            ref s => return dim_err(format!("conv1d kernel {s:?} for {c_in} input channels")),
        };
        if self.value(b).numel() != c_out {
            return dim_err(format!("conv1d bias has {} values for {c_out} outputs", self.value(b).numel()));
        }
        if k > t {
            return dim_err(format!("conv1d kernel width {k} exceeds length {t}"));
        }
        let t_out = t - k + 1;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; batch * c_out * t_out];
        for n in 0..batch {
            for o in 0..c_out {
                let orow = &mut out[(n * c_out + o) * t_out..(n * c_out + o + 1) * t_out];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..c_in {
                    let xrow = &xd[(n * c_in + c) * t..(n * c_in + c + 1) * t];
                    for kk in 0..k {
                        let wv = wd[(o * c_in + c) * k + kk];
                        for (ov, xv) in orow.iter_mut().zip(&xrow[kk..kk + t_out]) {
                            *ov += wv * xv;
                        }
                    }
                }
            }
        }
        let shape = if batched { vec![batch, c_out, t_out] } else { vec![c_out, t_out] };
        self.push(Tensor::new(shape, out)?, Op::Conv1d { x, w, b }, "conv1d")
    }

    // ----- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = self.nodes[b.0].value.shape()[1];
                if needs(*a) {
                    let acc = slot(grads, *a, m * k);
                    gemm_nt(g, val(*b), acc, m, n, k);
                }
                if needs(*b) {
                    let acc = slot(grads, *b, k * n);
                    gemm_tn(val(*a), g, acc, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = self.nodes[x.0].value.dims2().unwrap();
                let acc = slot(grads, *x, m * n);
                for r in 0..m {
                    for c in 0..n {
                        acc[r * n + c] += g[c * m + r];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        axpy(slot(grads, v, g.len()), g, 1.0);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let n = self.nodes[bias.0].value.numel();
                if needs(*x) {
                    axpy(slot(grads, *x, g.len()), g, 1.0);
                }
                if needs(*bias) {
                    let acc = slot(grads, *bias, n);
                    for row in g.chunks(n) {
                        axpy(acc, row, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let acc = slot(grads, *a, g.len());
                    for ((o, gv), bv) in acc.iter_mut().zip(g).zip(val(*b)) {
                        *o += gv * bv;
                    }
                }
                if needs(*b) {
                    let acc = slot(grads, *b, g.len());
                    for ((o, gv), av) in acc.iter_mut().zip(g).zip(val(*a)) {
                        *o += gv * av;
                    }
                }
            }
            Op::MulCol(x, col) => {
                let m = self.nodes[col.0].value.numel();
                let n = g.len() / m;
                if needs(*x) {
                    let c = val(*col);
                    let acc = slot(grads, *x, g.len());
                    for r in 0..m {
                        for j in 0..n {
                            acc[r * n + j] += g[r * n + j] * c[r];
                        }
                    }
                }
                if needs(*col) {
                    let xv = val(*x);
                    let acc = slot(grads, *col, m);
                    for r in 0..m {
                        acc[r] += (0..n).map(|j| g[r * n + j] * xv[r * n + j]).sum::<f64>();
                    }
                }
            }
            Op::Scale(x, f) => axpy(slot(grads, *x, g.len()), g, *f),
            Op::Unary(x, kind) => {
                let xv = val(*x);
                let acc = slot(grads, *x, g.len());
                for idx in 0..g.len() {
                    acc[idx] += g[idx]
                        * match kind {
                            Unary::Sigmoid => y[idx] * (1.0 - y[idx]),
                            Unary::Relu => {
                                if xv[idx] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => y[idx],
                            Unary::Log => 1.0 / xv[idx],
                            Unary::Neg => -1.0,
                        };
                }
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.shape()[1];
                let acc = slot(grads, *x, g.len());
                for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        acc[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(x, mask) => {
                let n = node.value.shape()[1];
                let acc = slot(grads, *x, g.len());
                for r in 0..g.len() / n {
                    let keep = |j: usize| mask.as_ref().map_or(true, |mk| mk[r * n + j]);
                    let gsum: f64 = (0..n).filter(|&j| keep(j)).map(|j| g[r * n + j]).sum();
                    for j in (0..n).filter(|&j| keep(j)) {
                        acc[r * n + j] += g[r * n + j] - y[r * n + j].exp() * gsum;
                    }
                }
            }
            Op::L2NormalizeRows(x, norms) => {
                let n = node.value.shape()[1];
                let acc = slot(grads, *x, g.len());
                for (r, &norm) in norms.iter().enumerate() {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let raw = val(*x)[r * n..(r + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot = if raw > NORM_EPS {
                        yr.iter().zip(gr).map(|(a, b)| a * b).sum()
                    } else {
                        0.0
                    };
                    for j in 0..n {
                        acc[r * n + j] += (gr[j] - yr[j] * dot) / norm;
                    }
                }
            }
            Op::StridedGather { x, offset, stride } => {
                let (m, t) = self.nodes[x.0].value.dims2().unwrap();
                let w = node.value.shape()[1];
                let acc = slot(grads, *x, m * t);
                for r in 0..m {
                    for c in 0..w {
                        acc[r * t + offset + c * stride] += g[r * w + c];
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.nodes[x.0].value.dims2().unwrap();
                let w = node.value.shape()[1];
                let acc = slot(grads, *x, m * n);
                for r in 0..m {
                    axpy(&mut acc[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w], 1.0);
                }
            }
            Op::GatherCols { x, idx } => {
                let (m, n) = self.nodes[x.0].value.dims2().unwrap();
                let w = idx.len();
                let acc = slot(grads, *x, m * n);
                for r in 0..m {
                    for (c, &src) in idx.iter().enumerate() {
                        acc[r * n + src] += g[r * w + c];
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let (m, n) = self.nodes[x.0].value.dims2().unwrap();
                let acc = slot(grads, *x, m * n);
                for (r, &src) in idx.iter().enumerate() {
                    axpy(&mut acc[src * n..(src + 1) * n], &g[r * n..(r + 1) * n], 1.0);
                }
            }
            Op::IndexAddRows { x, idx } => {
                let (m, n) = self.nodes[x.0].value.dims2().unwrap();
                let acc = slot(grads, *x, m * n);
                for (r, &dst) in idx.iter().enumerate() {
                    axpy(&mut acc[r * n..(r + 1) * n], &g[dst * n..(dst + 1) * n], 1.0);
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut start = 0;
                for &v in xs {
                    let ext = self.nodes[v.0].value.shape()[*axis];
                    if needs(v) {
                        let acc = slot(grads, v, outer * ext * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + ext) * inner];
                            axpy(&mut acc[o * ext * inner..(o + 1) * ext * inner], src, 1.0);
                        }
                    }
                    start += ext;
                }
            }
            Op::Reduce { x, kind, axis } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let total: usize = shape.iter().product();
                let acc = slot(grads, *x, total);
                match axis {
                    None => {
                        let f = match kind {
                            Reduce::Sum => g[0],
                            Reduce::Mean => g[0] / total as f64,
                        };
                        acc.iter_mut().for_each(|v| *v += f);
                    }
                    Some(ax) => {
                        let (outer, ext, inner) = split_axis(&shape, *ax);
                        let f = match kind {
                            Reduce::Sum => 1.0,
                            Reduce::Mean => 1.0 / ext as f64,
                        };
                        for o in 0..outer {
                            for e in 0..ext {
                                let base = (o * ext + e) * inner;
                                for i in 0..inner {
                                    acc[base + i] += f * g[o * inner + i];
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (batch, c_in, t) = match xs[..] {
                    [c, t] => (1, c, t),
                    [bt, c, t] => (bt, c, t),
                    _ => unreachable!(),
                };
                let ws = self.nodes[w.0].value.shape();
                let (c_out, k) = (ws[0], ws[2]);
                let t_out = t - k + 1;
                let xd = val(*x);
                let wd = val(*w);
                if needs(*b) {
                    let acc = slot(grads, *b, c_out);
                    for n in 0..batch {
                        for o in 0..c_out {
                            acc[o] += g[(n * c_out + o) * t_out..(n * c_out + o + 1) * t_out].iter().sum::<f64>();
                        }
                    }
                }
                if needs(*w) {
                    let acc = slot(grads, *w, c_out * c_in * k);
                    for n in 0..batch {
                        for o in 0..c_out {
                            let grow = &g[(n * c_out + o) * t_out..(n * c_out + o + 1) * t_out];
                            for c in 0..c_in {
                                let xrow = &xd[(n * c_in + c) * t..(n * c_in + c + 1) * t];
                                for kk in 0..k {
                                    acc[(o * c_in + c) * k + kk] +=
                                        grow.iter().zip(&xrow[kk..kk + t_out]).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    }
                }
                if needs(*x) {
                    let acc = slot(grads, *x, batch * c_in * t);
                    for n in 0..batch {
                        for o in 0..c_out {
                            let grow = &g[(n * c_out + o) * t_out..(n * c_out + o + 1) * t_out];
                            for c in 0..c_in {
                                let arow = &mut acc[(n * c_in + c) * t..(n * c_in + c + 1) * t];
                                for kk in 0..k {
                                    let wv = wd[(o * c_in + c) * k + kk];
                                    axpy(&mut arow[kk..kk + t_out], grow, wv);
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => axpy(slot(grads, *x, g.len()), g, 1.0),
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(acc: &mut [f64], x: &[f64], a: f64) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}
