//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s in execution
//! order, which is already a topological order, so the backward sweep is a
//! single reverse pass. Tapes are rebuilt per batch and confined to one
//! thread; trained parameters live outside the tape in a
//! [`ParamStore`](super::store::ParamStore) and are bound in as leaves.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::DiffError;

/// Probabilities are clamped to this open interval before the logs in
/// binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    AddBias { x: usize, b: usize },
    AddScalar { x: usize, s: usize },
    Sub(usize, usize),
    Mul(usize, usize),
    ScaleCols { x: usize, v: usize },
    MatMul { a: usize, b: usize },
    MatMulNT { a: usize, b: usize },
    ConcatCols { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    GatherRows { src: usize, rows: Vec<usize> },
    SliceCols { x: usize, start: usize },
    GroupMeanRows { src: usize, groups: Vec<Vec<usize>> },
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Dropout { x: usize, mask: Vec<f64> },
    Mean(usize),
    Sum(usize),
    Square(usize),
    Bce { p: usize, labels: Tensor },
    Reshape { x: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward/backward cycle.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(ParamId, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a value that does not take gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a standalone differentiable leaf (used heavily in tests).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a differentiable leaf; its gradient is
    /// routed back by [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.bindings.push((id, v.0));
        v
    }

    /// Binds a stored parameter as a constant (evaluation mode).
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert!(self.nodes[v.0].value.is_scalar());
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if `v`
    /// participates and requires gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires(*v))
    }

    // ---- elementwise and broadcast arithmetic ------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let req = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Add(a.0, b.0), req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let req = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Sub(a.0, b.0), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let req = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Mul(a.0, b.0), req))
    }

    /// Adds a length-`c` bias vector to every row of an `[r x c]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, DiffError> {
        let (_, c) = self.value(x).dims2();
        if self.value(b).numel() != c {
            return Err(DiffError::Shape {
                op: "add_bias",
                detail: format!(
                    "matrix {:?} vs bias {:?}",
                    self.value(x).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut value = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in value.data_mut().chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let req = self.any_requires(&[x, b]);
        Ok(self.push(value, Op::AddBias { x: x.0, b: b.0 }, req))
    }

    /// Adds a scalar variable to every element.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, DiffError> {
        if !self.value(s).is_scalar() {
            return Err(DiffError::Shape {
                op: "add_scalar",
                detail: format!(
                    "matrix {:?} vs non-scalar {:?}",
                    self.value(x).shape(),
                    self.value(s).shape()
                ),
            });
        }
        let sv = self.value(s).data()[0];
        let value = map(self.value(x), |v| v + sv);
        let req = self.any_requires(&[x, s]);
        Ok(self.push(value, Op::AddScalar { x: x.0, s: s.0 }, req))
    }

    /// Multiplies column `j` of `x` by `v[j]`.
    pub fn scale_cols(&mut self, x: Var, v: Var) -> Result<Var, DiffError> {
        let (_, c) = self.value(x).dims2();
        if self.value(v).numel() != c {
            return Err(DiffError::Shape {
                op: "scale_cols",
                detail: format!(
                    "matrix {:?} vs scale vector {:?}",
                    self.value(x).shape(),
                    self.value(v).shape()
                ),
            });
        }
        let scale = self.value(v).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            for (o, sv) in row.iter_mut().zip(&scale) {
                *o *= sv;
            }
        }
        let req = self.any_requires(&[x, v]);
        Ok(self.push(value, Op::ScaleCols { x: x.0, v: v.0 }, req))
    }

    // ---- matrix products ---------------------------------------------------

    /// `a [m x k] * b [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, ka) = self.rank2("matmul", a)?;
        let (kb, n) = self.rank2("matmul", b)?;
        if ka != kb {
            return Err(DiffError::Shape {
                op: "matmul",
                detail: format!(
                    "{:?} incompatible with {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        mm_acc(self.value(a), false, self.value(b), false, &mut out);
        let req = self.any_requires(&[a, b]);
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0 }, req))
    }

    /// `a [m x k] * transpose(b [n x k])`, giving `[m x n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, ka) = self.rank2("matmul_nt", a)?;
        let (n, kb) = self.rank2("matmul_nt", b)?;
        if ka != kb {
            return Err(DiffError::Shape {
                op: "matmul_nt",
                detail: format!(
                    "{:?} incompatible with transposed {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        mm_acc(self.value(a), false, self.value(b), true, &mut out);
        let req = self.any_requires(&[a, b]);
        Ok(self.push(out, Op::MatMulNT { a: a.0, b: b.0 }, req))
    }

    // ---- shape surgery -----------------------------------------------------

    /// Concatenation along the last axis of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::Shape {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        }
        let (rows, _) = self.value(parts[0]).dims2();
        let mut total = 0usize;
        for p in parts {
            let (r, c) = self.value(*p).dims2();
            if r != rows {
                return Err(DiffError::Shape {
                    op: "concat_cols",
                    detail: format!(
                        "row mismatch: {:?} vs {:?}",
                        self.value(parts[0]).shape(),
                        self.value(*p).shape()
                    ),
                });
            }
            total += c;
        }
        let mut out = Tensor::zeros(&[rows, total]);
        {
            let out_data = out.data_mut();
            let mut col_off = 0usize;
            for p in parts {
                let t = &self.nodes[p.0].value;
                let (_, c) = t.dims2();
                for r in 0..rows {
                    out_data[r * total + col_off..r * total + col_off + c]
                        .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
                col_off += c;
            }
        }
        let req = self.any_requires(parts);
        let idx = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, Op::ConcatCols { parts: idx }, req))
    }

    /// Stacks 2-D tensors with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::Shape {
                op: "concat_rows",
                detail: "no inputs".into(),
            });
        }
        let (_, cols) = self.value(parts[0]).dims2();
        let mut total = 0usize;
        for p in parts {
            let (r, c) = self.value(*p).dims2();
            if c != cols {
                return Err(DiffError::Shape {
                    op: "concat_rows",
                    detail: format!(
                        "column mismatch: {:?} vs {:?}",
                        self.value(parts[0]).shape(),
                        self.value(*p).shape()
                    ),
                });
            }
            total += r;
        }
        let mut data = Vec::with_capacity(total * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::new(vec![total, cols], data)?;
        let req = self.any_requires(parts);
        let idx = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, Op::ConcatRows { parts: idx }, req))
    }

    /// Row lookup: selects `rows` (with repetition allowed) from a 2-D
    /// tensor. This is the embedding-lookup primitive; gradients scatter-add
    /// back into the source rows.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let (r, c) = self.rank2("gather_rows", src)?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(DiffError::Shape {
                op: "gather_rows",
                detail: format!("row {bad} out of bounds for {:?}", self.value(src).shape()),
            });
        }
        if rows.is_empty() {
            return Err(DiffError::Shape {
                op: "gather_rows",
                detail: "no rows requested".into(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(&self.value(src).data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        let req = self.requires(src);
        Ok(self.push(
            out,
            Op::GatherRows {
                src: src.0,
                rows: rows.to_vec(),
            },
            req,
        ))
    }

    /// Copies the half-open column range `[start, end)` of a 2-D tensor.
    /// Inverse of [`Tape::concat_cols`]; used to split fused gate blocks.
    pub fn gather_cols_range(
        &mut self,
        x: Var,
        start: usize,
        end: usize,
    ) -> Result<Var, DiffError> {
        let (r, c) = self.rank2("gather_cols_range", x)?;
        if start >= end || end > c {
            return Err(DiffError::Shape {
                op: "gather_cols_range",
                detail: format!("range {start}..{end} invalid for {:?}", self.value(x).shape()),
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in self.value(x).data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::new(vec![r, w], data)?;
        let req = self.requires(x);
        Ok(self.push(out, Op::SliceCols { x: x.0, start }, req))
    }

    /// Per-group mean of source rows: output row `g` is the mean of
    /// `src[groups[g]]`. Used for neighborhood aggregation.
    pub fn group_mean_rows(&mut self, src: Var, groups: &[Vec<usize>]) -> Result<Var, DiffError> {
        let (r, c) = self.rank2("group_mean_rows", src)?;
        if groups.is_empty() {
            return Err(DiffError::Shape {
                op: "group_mean_rows",
                detail: "no groups".into(),
            });
        }
        let mut data = vec![0.0; groups.len() * c];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(DiffError::Shape {
                    op: "group_mean_rows",
                    detail: format!("group {g} is empty"),
                });
            }
            if let Some(&bad) = members.iter().find(|&&i| i >= r) {
                return Err(DiffError::Shape {
                    op: "group_mean_rows",
                    detail: format!("row {bad} out of bounds for {:?}", self.value(src).shape()),
                });
            }
            let inv = 1.0 / members.len() as f64;
            for &m in members {
                for j in 0..c {
                    data[g * c + j] += self.value(src).data()[m * c + j] * inv;
                }
            }
        }
        let out = Tensor::new(vec![groups.len(), c], data)?;
        let req = self.requires(src);
        Ok(self.push(
            out,
            Op::GroupMeanRows {
                src: src.0,
                groups: groups.to_vec(),
            },
            req,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(DiffError::Shape {
                op: "reshape",
                detail: format!("{:?} cannot view as {shape:?}", self.value(x).shape()),
            });
        }
        let out = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        let req = self.requires(x);
        Ok(self.push(out, Op::Reshape { x: x.0 }, req))
    }

    // ---- nonlinearities ----------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| v.max(0.0));
        let req = self.requires(x);
        self.push(value, Op::Relu(x.0), req)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = map(self.value(x), f64::tanh);
        let req = self.requires(x);
        self.push(value, Op::Tanh(x.0), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = map(self.value(x), sigmoid);
        let req = self.requires(x);
        self.push(value, Op::Sigmoid(x.0), req)
    }

    /// Numerically stable softmax along the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        debug_assert_eq!(value.dims2(), (r, c));
        let req = self.requires(x);
        self.push(value, Op::SoftmaxRows(x.0), req)
    }

    /// Inverted dropout: in training mode each element survives with
    /// probability `keep_prob` and is scaled by `1/keep_prob`; in evaluation
    /// mode this is the identity. The mask is a pure function of `seed`.
    pub fn dropout(
        &mut self,
        x: Var,
        keep_prob: f64,
        training: bool,
        seed: u64,
    ) -> Result<Var, DiffError> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(DiffError::InvalidKeepProb(keep_prob));
        }
        if !training || keep_prob == 1.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inv = 1.0 / keep_prob;
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < keep_prob { inv } else { 0.0 })
            .collect();
        let value = {
            let mut t = self.value(x).clone();
            for (v, m) in t.data_mut().iter_mut().zip(&mask) {
                *v *= m;
            }
            t
        };
        let req = self.requires(x);
        Ok(self.push(value, Op::Dropout { x: x.0, mask }, req))
    }

    // ---- reductions and losses ---------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(total), Op::Sum(x.0), req)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let total: f64 = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(total / n), Op::Mean(x.0), req)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| v * v);
        let req = self.requires(x);
        self.push(value, Op::Square(x.0), req)
    }

    /// Elementwise binary cross-entropy against fixed labels, with the
    /// probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn binary_cross_entropy(&mut self, p: Var, labels: &Tensor) -> Result<Var, DiffError> {
        if !self.value(p).same_shape(labels) {
            return Err(DiffError::Shape {
                op: "binary_cross_entropy",
                detail: format!(
                    "predictions {:?} vs labels {:?}",
                    self.value(p).shape(),
                    labels.shape()
                ),
            });
        }
        let value = {
            let mut t = self.value(p).clone();
            for (v, &a) in t.data_mut().iter_mut().zip(labels.data()) {
                let q = v.clamp(BCE_EPS, 1.0 - BCE_EPS);
                *v = -(a * q.ln() + (1.0 - a) * (1.0 - q).ln());
            }
            t
        };
        let req = self.requires(p);
        Ok(self.push(
            value,
            Op::Bce {
                p: p.0,
                labels: labels.clone(),
            },
            req,
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// gradient-requiring ancestor; leaves that do not influence the loss
    /// keep a `None` gradient, which reads back as zero.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(DiffError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let (before, at) = self.grads.split_at_mut(i);
            let gy = at[0].as_ref().expect("present by check above");
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for &p in &[*a, *b] {
                        if self.nodes[p].requires_grad {
                            acc_all(&mut before[p], &self.nodes[p].value, |g| {
                                add_into(g, gy.data())
                            });
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[*a].requires_grad {
                        acc_all(&mut before[*a], &self.nodes[*a].value, |g| {
                            add_into(g, gy.data())
                        });
                    }
                    if self.nodes[*b].requires_grad {
                        acc_all(&mut before[*b], &self.nodes[*b].value, |g| {
                            for (o, v) in g.data_mut().iter_mut().zip(gy.data()) {
                                *o -= v;
                            }
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        let other: Vec<f64> = self.nodes[b].value.data().to_vec();
                        acc_all(&mut before[a], &self.nodes[a].value, |g| {
                            for ((o, v), w) in g.data_mut().iter_mut().zip(gy.data()).zip(&other) {
                                *o += v * w;
                            }
                        });
                    }
                    if self.nodes[b].requires_grad {
                        let other: Vec<f64> = self.nodes[a].value.data().to_vec();
                        acc_all(&mut before[b], &self.nodes[b].value, |g| {
                            for ((o, v), w) in g.data_mut().iter_mut().zip(gy.data()).zip(&other) {
                                *o += v * w;
                            }
                        });
                    }
                }
                Op::AddBias { x, b } => {
                    let (_, c) = node.value.dims2();
                    if self.nodes[*x].requires_grad {
                        acc_all(&mut before[*x], &self.nodes[*x].value, |g| {
                            add_into(g, gy.data())
                        });
                    }
                    if self.nodes[*b].requires_grad {
                        acc_all(&mut before[*b], &self.nodes[*b].value, |g| {
                            for (j, o) in g.data_mut().iter_mut().enumerate() {
                                let mut s = 0.0;
                                let mut k = j;
                                while k < gy.numel() {
                                    s += gy.data()[k];
                                    k += c;
                                }
                                *o += s;
                            }
                        });
                    }
                }
                Op::AddScalar { x, s } => {
                    if self.nodes[*x].requires_grad {
                        acc_all(&mut before[*x], &self.nodes[*x].value, |g| {
                            add_into(g, gy.data())
                        });
                    }
                    if self.nodes[*s].requires_grad {
                        let total: f64 = gy.data().iter().sum();
                        acc_all(&mut before[*s], &self.nodes[*s].value, |g| {
                            g.data_mut()[0] += total
                        });
                    }
                }
                Op::ScaleCols { x, v } => {
                    let (_, c) = node.value.dims2();
                    let (x, v) = (*x, *v);
                    if self.nodes[x].requires_grad {
                        let scale = self.nodes[v].value.data().to_vec();
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            for (row_g, row_y) in
                                g.data_mut().chunks_mut(c).zip(gy.data().chunks(c))
                            {
                                for ((o, gyv), sv) in
                                    row_g.iter_mut().zip(row_y).zip(&scale)
                                {
                                    *o += gyv * sv;
                                }
                            }
                        });
                    }
                    if self.nodes[v].requires_grad {
                        let xs = self.nodes[x].value.data().to_vec();
                        acc_all(&mut before[v], &self.nodes[v].value, |g| {
                            for (row_y, row_x) in gy.data().chunks(c).zip(xs.chunks(c)) {
                                for ((o, gyv), xv) in
                                    g.data_mut().iter_mut().zip(row_y).zip(row_x)
                                {
                                    *o += gyv * xv;
                                }
                            }
                        });
                    }
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        let bv = self.nodes[b].value.clone();
                        acc_all(&mut before[a], &self.nodes[a].value, |g| {
                            mm_acc(gy, false, &bv, true, g);
                        });
                    }
                    if self.nodes[b].requires_grad {
                        let av = self.nodes[a].value.clone();
                        acc_all(&mut before[b], &self.nodes[b].value, |g| {
                            mm_acc(&av, true, gy, false, g);
                        });
                    }
                }
                Op::MatMulNT { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        let bv = self.nodes[b].value.clone();
                        acc_all(&mut before[a], &self.nodes[a].value, |g| {
                            mm_acc(gy, false, &bv, false, g);
                        });
                    }
                    if self.nodes[b].requires_grad {
                        let av = self.nodes[a].value.clone();
                        acc_all(&mut before[b], &self.nodes[b].value, |g| {
                            mm_acc(gy, true, &av, false, g);
                        });
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let (rows, total) = node.value.dims2();
                    let mut col_off = 0usize;
                    for p in parts {
                        let (_, c) = self.nodes[p].value.dims2();
                        if self.nodes[p].requires_grad {
                            acc_all(&mut before[p], &self.nodes[p].value, |g| {
                                for r in 0..rows {
                                    for j in 0..c {
                                        g.data_mut()[r * c + j] +=
                                            gy.data()[r * total + col_off + j];
                                    }
                                }
                            });
                        }
                        col_off += c;
                    }
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let (_, cols) = node.value.dims2();
                    let mut row_off = 0usize;
                    for p in parts {
                        let (r, _) = self.nodes[p].value.dims2();
                        if self.nodes[p].requires_grad {
                            acc_all(&mut before[p], &self.nodes[p].value, |g| {
                                let src = &gy.data()[row_off * cols..(row_off + r) * cols];
                                add_into(g, src);
                            });
                        }
                        row_off += r;
                    }
                }
                Op::GatherRows { src, rows } => {
                    let src = *src;
                    if self.nodes[src].requires_grad {
                        let rows = rows.clone();
                        let (_, c) = self.nodes[src].value.dims2();
                        acc_all(&mut before[src], &self.nodes[src].value, |g| {
                            for (k, &i) in rows.iter().enumerate() {
                                for j in 0..c {
                                    g.data_mut()[i * c + j] += gy.data()[k * c + j];
                                }
                            }
                        });
                    }
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    if self.nodes[x].requires_grad {
                        let (r, w) = node.value.dims2();
                        let (_, c) = self.nodes[x].value.dims2();
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            for i in 0..r {
                                for j in 0..w {
                                    g.data_mut()[i * c + start + j] += gy.data()[i * w + j];
                                }
                            }
                        });
                    }
                }
                Op::GroupMeanRows { src, groups } => {
                    let src = *src;
                    if self.nodes[src].requires_grad {
                        let groups = groups.clone();
                        let (_, c) = self.nodes[src].value.dims2();
                        acc_all(&mut before[src], &self.nodes[src].value, |g| {
                            for (gi, members) in groups.iter().enumerate() {
                                let inv = 1.0 / members.len() as f64;
                                for &m in members {
                                    for j in 0..c {
                                        g.data_mut()[m * c + j] += gy.data()[gi * c + j] * inv;
                                    }
                                }
                            }
                        });
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data().to_vec();
                    backprop_unary(before, &self.nodes, *x, gy, move |k, v| {
                        if y[k] > 0.0 {
                            v
                        } else {
                            0.0
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = node.value.data().to_vec();
                    backprop_unary(before, &self.nodes, *x, gy, move |k, v| {
                        v * (1.0 - y[k] * y[k])
                    });
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data().to_vec();
                    backprop_unary(before, &self.nodes, *x, gy, move |k, v| {
                        v * y[k] * (1.0 - y[k])
                    });
                }
                Op::SoftmaxRows(x) => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let (_, c) = node.value.dims2();
                        let y = node.value.data().to_vec();
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            for ((row_g, row_y), row_gy) in g
                                .data_mut()
                                .chunks_mut(c)
                                .zip(y.chunks(c))
                                .zip(gy.data().chunks(c))
                            {
                                let dot: f64 =
                                    row_y.iter().zip(row_gy).map(|(a, b)| a * b).sum();
                                for ((o, yv), gyv) in
                                    row_g.iter_mut().zip(row_y).zip(row_gy)
                                {
                                    *o += yv * (gyv - dot);
                                }
                            }
                        });
                    }
                }
                Op::Dropout { x, mask } => {
                    let mask = mask.clone();
                    backprop_unary(before, &self.nodes, *x, gy, move |k, v| v * mask[k]);
                }
                Op::Mean(x) => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let scale = gy.data()[0] / self.nodes[x].value.numel() as f64;
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            for o in g.data_mut() {
                                *o += scale;
                            }
                        });
                    }
                }
                Op::Sum(x) => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let scale = gy.data()[0];
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            for o in g.data_mut() {
                                *o += scale;
                            }
                        });
                    }
                }
                Op::Square(x) => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        let xv = self.nodes[x].value.data().to_vec();
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            for ((o, v), xi) in g.data_mut().iter_mut().zip(gy.data()).zip(&xv)
                            {
                                *o += 2.0 * xi * v;
                            }
                        });
                    }
                }
                Op::Bce { p, labels } => {
                    let p = *p;
                    if self.nodes[p].requires_grad {
                        let labels = labels.clone();
                        let pv = self.nodes[p].value.data().to_vec();
                        acc_all(&mut before[p], &self.nodes[p].value, |g| {
                            for (k, o) in g.data_mut().iter_mut().enumerate() {
                                let raw = pv[k];
                                // flat outside the clamp interval
                                if raw <= BCE_EPS || raw >= 1.0 - BCE_EPS {
                                    continue;
                                }
                                let a = labels.data()[k];
                                *o += gy.data()[k] * (raw - a) / (raw * (1.0 - raw));
                            }
                        });
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    if self.nodes[x].requires_grad {
                        acc_all(&mut before[x], &self.nodes[x].value, |g| {
                            add_into(g, gy.data())
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of bound parameter leaves into the store.
    /// Parameters whose leaves did not reach the loss contribute zero.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(id, node) in &self.bindings {
            if let Some(g) = &self.grads[node] {
                store.add_grad(id, g);
            }
        }
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(DiffError::Shape {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize), DiffError> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(DiffError::Shape {
                op,
                detail: format!("expected rank-2 tensor, got {:?}", t.shape()),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }
}

fn backprop_unary(
    before: &mut [Option<Tensor>],
    nodes: &[Node],
    x: usize,
    gy: &Tensor,
    rule: impl Fn(usize, f64) -> f64,
) {
    if nodes[x].requires_grad {
        acc_all(&mut before[x], &nodes[x].value, |g| {
            for (k, (o, &v)) in g.data_mut().iter_mut().zip(gy.data()).enumerate() {
                *o += rule(k, v);
            }
        });
    }
}

fn acc_all(slot: &mut Option<Tensor>, like: &Tensor, f: impl FnOnce(&mut Tensor)) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(like.shape()));
    f(g);
}

fn add_into(g: &mut Tensor, src: &[f64]) {
    for (o, v) in g.data_mut().iter_mut().zip(src) {
        *o += v;
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = f(*o, v);
    }
    out
}

/// Numerically stable logistic function (shared with scalar-side code that
/// mirrors model math outside the tape).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += op(a) * op(b)` where `op` optionally transposes.
fn mm_acc(a: &Tensor, ta: bool, b: &Tensor, tb: bool, out: &mut Tensor) {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let av = ArrayView2::from_shape((ar, ac), a.data()).expect("contiguous");
    let bv = ArrayView2::from_shape((br, bc), b.data()).expect("contiguous");
    let (or, oc) = out.dims2();
    let mut ov = ArrayViewMut2::from_shape((or, oc), out.data_mut()).expect("contiguous");
    match (ta, tb) {
        (false, false) => general_mat_mul(1.0, &av, &bv, 1.0, &mut ov),
        (false, true) => general_mat_mul(1.0, &av, &bv.t(), 1.0, &mut ov),
        (true, false) => general_mat_mul(1.0, &av.t(), &bv, 1.0, &mut ov),
        (true, true) => general_mat_mul(1.0, &av.t(), &bv.t(), 1.0, &mut ov),
    }
}
