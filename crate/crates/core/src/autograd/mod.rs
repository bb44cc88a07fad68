//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every primitive applied to its variables in
//! evaluation order. Calling [`Graph::backward`] on a scalar walks that
//! record in reverse and returns one accumulated gradient per leaf that
//! requires gradients (parameters registered with [`Graph::param`] and
//! inputs created with [`Graph::input`]).
//!
//! Shape rules (all operands are treated as `[rows, cols]` matrices):
//!
//! | primitive | operands | result |
//! |---|---|---|
//! | `matmul`, `matmul_sorted` | `[m,k]`, `[k,n]` | `[m,n]` |
//! | `add`, `mul` | equal shapes | same |
//! | `softmax_rows`, `layer_norm_rows`, `relu`, `dropout` | `[m,n]` | `[m,n]` |
//! | `conv1d` | `[t,c_in]`, `[k*c_in, c_out]` | `[t,c_out]` |
//! | `max_pool_rows` | `[t,c]` | `[1,c]` |
//! | `concat_cols` | `[m,n_i]...` | `[m, sum n_i]` |
//! | `concat_rows` | `[m_i,n]...` | `[sum m_i, n]` |
//! | `broadcast_rows` | `[1,n]` | `[m,n]` |
//! | `reshape` / `flatten` | any | same element count |
//! | `gather_rows` | `[v,d]` | `[len(idx), d]` |
//! | `softmax_cross_entropy` | `[b,c]`, `b` targets | `[1,1]` |

pub mod gradcheck;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Conv1d { x: Var, w: Var, kernel: usize },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    BroadcastRows(Var),
    GatherRows { table: Var, idx: Vec<Option<usize>> },
    Dropout { x: Var, mask: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    Transpose(Var),
    SliceCols { x: Var, start: usize },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to a leaf variable, if it received any.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
    kink_signature: u64,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Graph {
    /// Graph in evaluation mode: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            kink_signature: FNV_OFFSET,
            backward_done: false,
        }
    }

    /// Graph in training mode; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Hash of every relu activation pattern and max-pool argmax seen so
    /// far. Two evaluations with equal signatures took the same branch at
    /// every non-differentiable point.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn mix(&mut self, word: u64) {
        self.kink_signature = (self.kink_signature ^ word).wrapping_mul(FNV_PRIME);
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, op: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant operand; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false, "constant")
    }

    /// Differentiable input leaf.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true, "input")
    }

    /// Registers a parameter as a leaf; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        let v = self.leaf(store.get(id).clone(), true, "param")?;
        self.params.insert(id, v);
        Ok(v)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · b` with every inner reduction summed in ascending order of its
    /// terms, so permuting the columns of `a` together with the rows of `b`
    /// leaves the result bit-identical. Gradients are those of `matmul`.
    pub fn matmul_sorted(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (va.dims2(), vb.dims2());
        if k != k2 {
            return Err(Error::shape("matmul_sorted", va.shape(), vb.shape()));
        }
        let mut out = vec![0.0; m * n];
        let mut terms = vec![0.0; k];
        for i in 0..m {
            let ar = va.row(i);
            for j in 0..n {
                for (p, t) in terms.iter_mut().enumerate() {
                    *t = ar[p] * vb.get(p, j);
                }
                out[i * n + j] = sorted_sum(&mut terms);
            }
        }
        self.push("matmul_sorted", Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    /// Relu with subgradient 0 at exactly 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let mut word = 0u64;
        for (i, &x) in self.value(a).data().iter().enumerate() {
            if x > 0.0 {
                word = word.rotate_left(7) ^ (i as u64 + 1);
            }
        }
        self.mix(word);
        self.push("relu", out, Op::Relu(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise normalisation to zero mean and unit (biased) variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = x.dims2();
        let mut out = vec![0.0; rows * cols];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push("layer_norm_rows", out, Op::LayerNormRows { x: a, inv_std }, &[a])
    }

    /// Cross-correlation over the row (token) axis, stride 1, zero padding
    /// that preserves length. `w` is `[kernel * c_in, c_out]` with row index
    /// `tap * c_in + channel`. `kernel` must be odd.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize) -> Result<Var> {
        let (t, c_in) = self.dims(x);
        let (wr, c_out) = self.dims(w);
        if kernel.is_multiple_of(2) || wr != kernel * c_in {
            return Err(Error::shape("conv1d", self.value(x).shape(), self.value(w).shape()));
        }
        let cols = im2col(self.value(x).data(), t, c_in, kernel);
        let mut out = vec![0.0; t * c_out];
        gemm_nn(&cols, self.value(w).data(), &mut out, t, kernel * c_in, c_out);
        let out = Tensor::matrix(t, c_out, out);
        self.push("conv1d", out, Op::Conv1d { x, w, kernel }, &[x, w])
    }

    /// Column-wise maximum over rows; ties go to the first row.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (t, c) = v.dims2();
        let mut argmax = vec![0usize; c];
        let mut out = v.row(0).to_vec();
        for r in 1..t {
            for (j, &val) in v.row(r).iter().enumerate() {
                if val > out[j] {
                    out[j] = val;
                    argmax[j] = r;
                }
            }
        }
        let word = argmax
            .iter()
            .fold(0u64, |acc, &r| acc.rotate_left(5) ^ (r as u64 + 1));
        self.mix(word);
        let out = Tensor::row_vector(out);
        self.push("max_pool_rows", out, Op::MaxPoolRows { x, argmax }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Input("concat_cols: no operands".into()))?;
        let rows = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(Error::shape("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, out);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Input("concat_rows: no operands".into()))?;
        let cols = self.dims(first).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::shape("concat_rows", self.value(first).shape(), self.value(p).shape()));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, cols, out);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x);
        let n: usize = shape.iter().product();
        if n != v.numel() {
            return Err(Error::shape("reshape", v.shape(), &shape));
        }
        let out = Tensor::new(shape, v.data().to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// `[m, n]` to `[1, m*n]`, row-major.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.reshape(x, vec![1, n])
    }

    /// Repeats a single row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rows() != 1 || rows == 0 {
            return Err(Error::shape("broadcast_rows", v.shape(), &[rows, v.cols()]));
        }
        let out = Tensor::matrix(rows, v.cols(), v.data().repeat(rows));
        self.push("broadcast_rows", out, Op::BroadcastRows(x), &[x])
    }

    /// Embedding lookup; `None` yields a zero row.
    pub fn gather_rows(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2();
        if idx.is_empty() {
            return Err(Error::Input("gather_rows: empty index list".into()));
        }
        let mut out = vec![0.0; idx.len() * d];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= v {
                    return Err(Error::Input(format!("gather_rows: index {i} out of range for {v} rows")));
                }
                out[r * d..(r + 1) * d].copy_from_slice(t.row(i));
            }
        }
        let out = Tensor::matrix(idx.len(), d, out);
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        )
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Dropout { x, mask }, &[x])
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.dims(logits);
        if targets.len() != b {
            return Err(Error::shape("softmax_cross_entropy", self.value(logits).shape(), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Input(format!("softmax_cross_entropy: target {t} out of range for {c} classes")));
        }
        let probs = softmax_rows(self.value(logits));
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = self.value(logits).row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let out = Tensor::scalar(loss / b as f64);
        self.push(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", v.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, out);
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    // Composite helpers.

    /// `x · w + b` with `b` a `[1, n]` row broadcast over the rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let rows = self.dims(xw).0;
        let bb = self.broadcast_rows(b, rows)?;
        self.add(xw, bb)
    }

    /// Layer normalisation followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.layer_norm_rows(x, eps)?;
        let rows = self.dims(n).0;
        let g = self.broadcast_rows(gain, rows)?;
        let b = self.broadcast_rows(bias, rows)?;
        let scaled = self.mul(n, g)?;
        self.add(scaled, b)
    }

    /// Reverse pass from a scalar loss. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Backward("graph was already differentiated".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaves.insert(i, Tensor::new(node.value.shape().to_vec(), gy)?);
                continue;
            }
            self.backprop_node(i, &gy, &mut grads);
        }

        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(gy, self.value(*b).data(), &mut ga, m, n, k);
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), gy, &mut gb, k, m, n);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, gy.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, gy.to_vec());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let g = gy.iter().zip(self.value(*b).data()).map(|(g, v)| g * v).collect();
                    accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let g = gy.iter().zip(self.value(*a).data()).map(|(g, v)| g * v).collect();
                    accumulate(grads, *b, g);
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, gy.iter().map(|g| g * c).collect()),
            Op::Relu(a) => {
                let g = gy
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, g);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = y.dims2();
                let mut g = vec![0.0; r * c];
                for row in 0..r {
                    let yr = y.row(row);
                    let gr = &gy[row * c..(row + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        g[row * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, g);
            }
            Op::LayerNormRows { x, inv_std } => {
                let (r, c) = y.dims2();
                let n = c as f64;
                let mut g = vec![0.0; r * c];
                for row in 0..r {
                    let yr = y.row(row);
                    let gr = &gy[row * c..(row + 1) * c];
                    let sum_g: f64 = gr.iter().sum();
                    let sum_gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        g[row * c + j] = inv_std[row] / n * (n * gr[j] - sum_g - yr[j] * sum_gy);
                    }
                }
                accumulate(grads, *x, g);
            }
            Op::Conv1d { x, w, kernel } => {
                let (t, c_in) = self.dims(*x);
                let c_out = self.dims(*w).1;
                let kc = kernel * c_in;
                let cols = im2col(self.value(*x).data(), t, c_in, *kernel);
                if self.wants(*w) {
                    let mut gw = vec![0.0; kc * c_out];
                    gemm_tn(&cols, gy, &mut gw, kc, t, c_out);
                    accumulate(grads, *w, gw);
                }
                if self.wants(*x) {
                    let mut gcols = vec![0.0; t * kc];
                    gemm_nt(gy, self.value(*w).data(), &mut gcols, t, c_out, kc);
                    accumulate(grads, *x, col2im(&gcols, t, c_in, *kernel));
                }
            }
            Op::MaxPoolRows { x, argmax } => {
                let (t, c) = self.dims(*x);
                let mut g = vec![0.0; t * c];
                for (j, &r) in argmax.iter().enumerate() {
                    g[r * c + j] += gy[j];
                }
                accumulate(grads, *x, g);
            }
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.wants(p) {
                        let mut g = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            g.extend_from_slice(&gy[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(grads, p, g);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.wants(p) {
                        accumulate(grads, p, gy[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => accumulate(grads, *x, gy.to_vec()),
            Op::BroadcastRows(x) => {
                let (r, c) = y.dims2();
                let mut g = vec![0.0; c];
                for row in 0..r {
                    for j in 0..c {
                        g[j] += gy[row * c + j];
                    }
                }
                accumulate(grads, *x, g);
            }
            Op::GatherRows { table, idx } => {
                let (v, d) = self.dims(*table);
                let mut g = vec![0.0; v * d];
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        for j in 0..d {
                            g[i * d + j] += gy[r * d + j];
                        }
                    }
                }
                accumulate(grads, *table, g);
            }
            Op::Dropout { x, mask } => {
                accumulate(grads, *x, gy.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let (b, c) = probs.dims2();
                let scale = gy[0] / b as f64;
                let mut g: Vec<f64> = probs.data().iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    g[r * c + t] -= scale;
                }
                accumulate(grads, *logits, g);
            }
            Op::Transpose(x) => {
                let (r, c) = y.dims2();
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[j * r + i] = gy[i * c + j];
                    }
                }
                accumulate(grads, *x, g);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims(*x);
                let len = y.cols();
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    g[i * c + start..i * c + start + len].copy_from_slice(&gy[i * len..(i + 1) * len]);
                }
                accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, vec![gy[0]; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sums in ascending order, so the result depends only on the multiset of
/// terms and not on their arrangement.
pub(crate) fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    // Neumaier compensation
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &t in terms.iter() {
        let s = sum + t;
        c += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    sum + c
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = vec![0.0; r * c];
    for row in 0..r {
        let xr = x.row(row);
        let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[row * c..(row + 1) * c];
        for (oj, &v) in o.iter_mut().zip(xr) {
            *oj = (v - max).exp();
        }
        let s = sorted_sum(&mut o.to_vec());
        for oj in o.iter_mut() {
            *oj /= s;
        }
    }
    Tensor::matrix(r, c, out)
}

fn im2col(x: &[f64], t: usize, c_in: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let kc = kernel * c_in;
    let mut cols = vec![0.0; t * kc];
    for pos in 0..t {
        for tap in 0..kernel {
            let src = pos as isize + tap as isize - pad as isize;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            cols[pos * kc + tap * c_in..pos * kc + (tap + 1) * c_in]
                .copy_from_slice(&x[src * c_in..(src + 1) * c_in]);
        }
    }
    cols
}

fn col2im(cols: &[f64], t: usize, c_in: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let kc = kernel * c_in;
    let mut x = vec![0.0; t * c_in];
    for pos in 0..t {
        for tap in 0..kernel {
            let src = pos as isize + tap as isize - pad as isize;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            for c in 0..c_in {
                x[src * c_in + c] += cols[pos * kc + tap * c_in + c];
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row_vector(v.to_vec())
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(row(&[0.0, 0.0])).unwrap();
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_two_values() {
        let mut g = Graph::new();
        let x = g.constant(row(&[1.0, 3.0])).unwrap();
        let y = g.layer_norm_rows(x, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn layer_norm_constant_row_without_eps_is_non_finite() {
        let mut g = Graph::new();
        let x = g.constant(row(&[2.0, 2.0])).unwrap();
        assert!(matches!(g.layer_norm_rows(x, 0.0), Err(Error::NonFinite { .. })));
        let mut g = Graph::new();
        let x = g.constant(row(&[0.0, 0.0])).unwrap();
        let y = g.layer_norm_rows(x, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(row(&[0.3, -1.2, 2.0, 0.7])).unwrap();
        let s = g.softmax_rows(x).unwrap();
        let total = g.sum(s).unwrap();
        let grads = g.backward(total).unwrap();
        for v in grads.wrt(x).unwrap().data() {
            assert!(v.abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let z = [0.5, -0.25, 1.5];
        let mut g = Graph::new();
        let x = g.input(row(&z)).unwrap();
        let l = g.softmax_cross_entropy(x, &[1]).unwrap();
        let grads = g.backward(l).unwrap();
        let p = softmax_rows(&row(&z));
        let gx = grads.wrt(x).unwrap();
        for j in 0..3 {
            let expected = p.data()[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((gx.data()[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.input(row(&[1.0, 2.0])).unwrap();
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Backward(_))));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Backward(_))));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3)).unwrap();
        let b = g.constant(Tensor::zeros(3, 2)).unwrap();
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let mut g = Graph::new();
        assert!(matches!(
            g.constant(row(&[1.0, f64::NAN])),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn relu_zero_has_zero_subgradient() {
        let mut g = Graph::new();
        let x = g.input(row(&[0.0, 1.0, -1.0])).unwrap();
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn conv1d_preserves_length_and_pads_with_zeros() {
        let mut g = Graph::new();
        // single channel, kernel [1, 1, 1] is a moving sum
        let x = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0])).unwrap();
        let w = g.constant(Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0])).unwrap();
        let y = g.conv1d(x, w, 3).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let mut g = Graph::new();
        let x = g.input(row(&[1.0, 2.0])).unwrap();
        let y = g.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);

        let mut g = Graph::training(7);
        let x = g.input(Tensor::filled(1, 1000, 1.0)).unwrap();
        let y = g.dropout(x, 0.5).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept), "{kept}");
    }

    #[test]
    fn dropout_backward_reuses_the_forward_mask() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::matrix(1, 64, (0..64).map(|i| 0.5 + i as f64).collect()));
        let mut g = Graph::training(3);
        let x = g.param(&store, id).unwrap();
        let y = g.dropout(x, 0.25).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        let mut dropped = 0;
        for (gx, y) in grads.param(id).unwrap().data().iter().zip(g.value(y).data()) {
            let m = if *y == 0.0 { 0.0 } else { 1.0 / 0.75 };
            dropped += usize::from(m == 0.0);
            assert_eq!(*gx, m);
        }
        assert!(dropped > 0 && dropped < 64);
    }

    #[test]
    fn gather_rows_zero_for_missing() {
        let mut g = Graph::new();
        let t = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = g.gather_rows(t, &[Some(1), None, Some(1)]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0, 0.0, 0.0, 3.0, 4.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(t).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut g = Graph::new();
        let a = g.constant(row(&[1.0])).unwrap();
        let b = g.scale(a, 2.0).unwrap();
        assert!(!g.requires_grad(b));
    }
}
