//! Operation tape for reverse-mode differentiation.
//!
//! A [`Tape`] records every operator applied during a forward pass together
//! with whatever the operator needs for its backward rule. Node indices are
//! assigned in creation order, so the record is topologically sorted by
//! construction and [`Tape::backward`] simply walks it in reverse. A tape is
//! meant to be built for one batch and dropped afterwards.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::store::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op is broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand is a single row repeated over the left operand's rows.
    Row,
    /// Right operand is a single column repeated over the left operand's columns.
    Col,
    Scalar,
}

type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T> + Send + Sync>;

enum Op<T> {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, Var),
    Affine(Var, T),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var, T),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout(Var, Vec<T>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SumAll(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    RowSqDist(Var, Vec<(usize, usize)>),
    Custom(Var, CustomBackward<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: BTreeMap<usize, Tensor<T>>,
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn bcast_index(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
        Bcast::Scalar => 0,
    }
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn reduce_bcast<T: Scalar>(kind: Bcast, full: &[T], cols: usize, target: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(target);
    let o = out.data_mut();
    for (i, &g) in full.iter().enumerate() {
        let j = bcast_index(kind, i, cols);
        o[j] = o[j] + g;
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a [`Tape::leaf`] after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(&v.0)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Differentiable input whose gradient is kept on the tape.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Differentiable reference to a stored parameter; its gradient is
    /// accumulated into the store on backward.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() > 2 || bv.shape().len() > 2 || av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::matrix(n, m, matmul_raw(av.data(), bv.data(), n, k, m))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.shape().len() > 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: xv.shape().to_vec(),
                reason: "rank must be at most 2".into(),
            });
        }
        let (r, c) = (xv.rows(), xv.cols());
        let out = Tensor::matrix(c, r, transpose_raw(xv.data(), r, c))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    fn bcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Ok(Bcast::Same)
        } else if bv.numel() == 1 {
            Ok(Bcast::Scalar)
        } else if bv.cols() == av.cols() && bv.rows() == 1 {
            Ok(Bcast::Row)
        } else if bv.cols() == 1 && bv.rows() == av.rows() {
            Ok(Bcast::Col)
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Bcast), TensorError> {
        let kind = self.bcast_kind(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[bcast_index(kind, i, cols)]))
            .collect();
        Ok((Tensor::new(av.shape().to_vec(), data)?, kind))
    }

    /// `a + b`, where `b` has `a`'s shape, is one row, one column or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (out, kind) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b, kind), rg))
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (out, kind) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b, kind), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let nb = self.affine(b, -T::one(), T::zero())?;
        self.add(a, nb)
    }

    /// `x * s` for a single-element `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "scale",
                lhs: self.shape(x).to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        let k = sv.item();
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::Scale(x, s), rg))
    }

    /// `a * x + c` with constant `a` and `c`.
    pub fn affine(&mut self, x: Var, a: T, c: T) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| a * v + c);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Affine(x, a), rg))
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = *xs.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let rows = self.value(first).rows();
        for &x in xs {
            if self.value(x).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    /// Stacks inputs with equal column counts on top of each other.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = *xs.first().ok_or(TensorError::InvalidArgument {
            op: "concat_rows",
            reason: "no inputs".into(),
        })?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(out, Op::ConcatRows(xs.to_vec()), rg))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if start >= end || end > xv.cols() {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                shape: xv.shape().to_vec(),
                reason: format!("column range {start}..{end}"),
            });
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let out = Tensor::matrix(rows, end - start, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    /// Natural logarithm of `max(x, min)`; the gradient is zero where clamped.
    pub fn ln_clamped(&mut self, x: Var, min: T) -> Var {
        self.unary(x, |v| v.max(min).ln(), Op::Ln(x, min))
    }

    /// Softmax over the last dimension of every row.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::RowSoftmax(x), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// learnable per-column `gamma` scale and `beta` shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let cols = xv.cols();
        for p in [gamma, beta] {
            if self.value(p).numel() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let n = T::lit(cols as f64);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[c] + b[c]);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `p` and scales survivors by `1/(1-p)`; otherwise returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {p} outside [0, 1)"),
            });
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() >= p { keep } else { T::zero() })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    /// Column-wise mean over rows, shape `[1, cols]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if rows == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean_rows",
                shape: xv.shape().to_vec(),
                reason: "no rows".into(),
            });
        }
        let mut out = vec![T::zero(); cols];
        for row in xv.data().chunks(cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        let n = T::lit(rows as f64);
        out.iter_mut().for_each(|o| *o = *o / n);
        let out = Tensor::matrix(1, cols, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MeanRows(x), rg))
    }

    /// Column-wise max over rows, shape `[1, cols]`. Ties resolve to the
    /// first row, which also receives the whole subgradient.
    pub fn max_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if rows == 0 {
            return Err(TensorError::InvalidShape {
                op: "max_rows",
                shape: xv.shape().to_vec(),
                reason: "no rows".into(),
            });
        }
        let mut arg = vec![0usize; cols];
        let mut out = xv.row(0).to_vec();
        for r in 1..rows {
            for (c, &v) in xv.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
        let out = Tensor::matrix(1, cols, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxRows(x, arg), rg))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::SumAll(x), rg)
    }

    /// Rows of `x` selected by `idx`, shape `[idx.len(), cols]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    extent: rows,
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(idx.len(), cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// Adds row `k` of `x` into output row `idx[k]`; output has `n` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if idx.len() != xv.rows() {
            return Err(TensorError::InvalidShape {
                op: "scatter_add_rows",
                shape: xv.shape().to_vec(),
                reason: format!("{} target indices for {} rows", idx.len(), xv.rows()),
            });
        }
        let cols = xv.cols();
        let mut data = vec![T::zero(); n * cols];
        for (k, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: i,
                    extent: n,
                });
            }
            for (o, &v) in data[i * cols..(i + 1) * cols].iter_mut().zip(xv.row(k)) {
                *o = *o + v;
            }
        }
        let out = Tensor::matrix(n, cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScatterAddRows(x, idx.to_vec()), rg))
    }

    /// `‖x_i − x_j‖²` for each row pair, shape `[pairs.len(), 1]`.
    pub fn row_sq_dist(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let rows = xv.rows();
        let mut data = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            let bad = if i >= rows { Some(i) } else if j >= rows { Some(j) } else { None };
            if let Some(index) = bad {
                return Err(TensorError::IndexOutOfRange {
                    op: "row_sq_dist",
                    index,
                    extent: rows,
                });
            }
            let d = xv
                .row(i)
                .iter()
                .zip(xv.row(j))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            data.push(d);
        }
        let out = Tensor::matrix(pairs.len(), 1, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::RowSqDist(x, pairs.to_vec()), rg))
    }

    /// Elementwise op with a caller-supplied backward rule mapping
    /// `(input, output, output_grad)` to the input gradient.
    pub fn custom_unary(
        &mut self,
        x: Var,
        forward: impl Fn(T) -> T,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T> + Send + Sync + 'static,
    ) -> Var {
        let out = self.value(x).map(forward);
        let rg = self.rg(x);
        self.push(out, Op::Custom(x, Box::new(backward)), rg)
    }

    /// Propagates gradients from a single-element `loss` to every
    /// differentiable input. Parameter gradients are added to `store` and
    /// leaf gradients to the tape, so a second call without
    /// [`ParamStore::zero_grads`] doubles them.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));
        let mut leaves = Vec::new();
        let nodes = &self.nodes;
        let acc = |adj: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let like = |v: Var, data: Vec<T>| {
                Tensor::new(nodes[v.0].value.shape().to_vec(), data).expect("gradient shape")
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Leaf => leaves.push((i, g)),
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if nodes[a.0].requires_grad {
                        let bt = transpose_raw(bv.data(), k, m);
                        acc(&mut adj, *a, like(*a, matmul_raw(g.data(), &bt, n, m, k)));
                    }
                    if nodes[b.0].requires_grad {
                        let at = transpose_raw(av.data(), n, k);
                        acc(&mut adj, *b, like(*b, matmul_raw(&at, g.data(), k, n, m)));
                    }
                }
                Op::Transpose(x) => {
                    let d = transpose_raw(g.data(), y.rows(), y.cols());
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Add(a, b, kind) => {
                    let cols = y.cols();
                    if nodes[b.0].requires_grad {
                        acc(&mut adj, *b, reduce_bcast(*kind, g.data(), cols, val(*b).shape()));
                    }
                    acc(&mut adj, *a, like(*a, g.into_data()));
                }
                Op::Mul(a, b, kind) => {
                    let (av, bv) = (val(*a), val(*b));
                    let cols = y.cols();
                    if nodes[a.0].requires_grad {
                        let d = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(k, &gv)| gv * bv.data()[bcast_index(*kind, k, cols)])
                            .collect();
                        acc(&mut adj, *a, like(*a, d));
                    }
                    if nodes[b.0].requires_grad {
                        let full: Vec<T> = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                        acc(&mut adj, *b, reduce_bcast(*kind, &full, cols, bv.shape()));
                    }
                }
                Op::Scale(x, s) => {
                    let (xv, k) = (val(*x), val(*s).item());
                    if nodes[s.0].requires_grad {
                        let ds = g.data().iter().zip(xv.data()).map(|(&gv, &v)| gv * v).sum();
                        acc(&mut adj, *s, like(*s, vec![ds]));
                    }
                    acc(&mut adj, *x, g.map(|gv| gv * k));
                }
                Op::Affine(x, a) => acc(&mut adj, *x, g.map(|gv| gv * *a)),
                Op::Concat(xs) => {
                    let rows = y.rows();
                    let mut offset = 0;
                    for &x in xs {
                        let w = val(x).cols();
                        if nodes[x.0].requires_grad {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            acc(&mut adj, x, like(x, d));
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let n = val(x).numel();
                        if nodes[x.0].requires_grad {
                            acc(&mut adj, x, like(x, g.data()[offset..offset + n].to_vec()));
                        }
                        offset += n;
                    }
                }
                Op::SliceCols(x, start) => {
                    let xv = val(*x);
                    let (xc, w) = (xv.cols(), y.cols());
                    let mut d = vec![T::zero(); xv.numel()];
                    for r in 0..y.rows() {
                        d[r * xc + start..r * xc + start + w].copy_from_slice(g.row(r));
                    }
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Exp(x) => {
                    let d = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * yv).collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Sigmoid(x) => {
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                        .collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Tanh(x) => {
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                        .collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Relu(x) => {
                    let d = g
                        .data()
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Ln(x, min) => {
                    let d = g
                        .data()
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&gv, &xv)| if xv > *min { gv / xv } else { T::zero() })
                        .collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::RowSoftmax(x) => {
                    let cols = y.cols();
                    let mut d = Vec::with_capacity(y.numel());
                    for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        d.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot)));
                    }
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let cols = y.cols();
                    let n = T::lit(cols as f64);
                    let gam = val(*gamma).data();
                    let mut dx = Vec::with_capacity(y.numel());
                    let mut dgamma = vec![T::zero(); cols];
                    let mut dbeta = vec![T::zero(); cols];
                    for (r, (gr, hr)) in g.data().chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for c in 0..cols {
                            let dh = gr[c] * gam[c];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[c];
                            dgamma[c] = dgamma[c] + gr[c] * hr[c];
                            dbeta[c] = dbeta[c] + gr[c];
                        }
                        let k = inv_std[r] / n;
                        for c in 0..cols {
                            let dh = gr[c] * gam[c];
                            dx.push(k * (n * dh - sum_dh - hr[c] * sum_dh_h));
                        }
                    }
                    acc(&mut adj, *gamma, like(*gamma, dgamma));
                    acc(&mut adj, *beta, like(*beta, dbeta));
                    acc(&mut adj, *x, like(*x, dx));
                }
                Op::Dropout(x, mask) => {
                    let d = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::MeanRows(x) => {
                    let xv = val(*x);
                    let n = T::lit(xv.rows() as f64);
                    let row: Vec<T> = g.data().iter().map(|&gv| gv / n).collect();
                    let d = row.iter().copied().cycle().take(xv.numel()).collect();
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::MaxRows(x, arg) => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    let mut d = vec![T::zero(); xv.numel()];
                    for (c, &r) in arg.iter().enumerate() {
                        d[r * cols + c] = g.data()[c];
                    }
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::SumAll(x) => {
                    let gv = g.item();
                    acc(&mut adj, *x, like(*x, vec![gv; val(*x).numel()]));
                }
                Op::GatherRows(x, idx) => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    let mut d = vec![T::zero(); xv.numel()];
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, &gv) in d[r * cols..(r + 1) * cols].iter_mut().zip(g.row(k)) {
                            *o = *o + gv;
                        }
                    }
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::ScatterAddRows(x, idx) => {
                    let mut d = Vec::with_capacity(val(*x).numel());
                    for &r in idx {
                        d.extend_from_slice(g.row(r));
                    }
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::RowSqDist(x, pairs) => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    let mut d = vec![T::zero(); xv.numel()];
                    let two = T::lit(2.0);
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        let k = two * g.data()[p];
                        for c in 0..cols {
                            let diff = k * (xv.at(i, c) - xv.at(j, c));
                            d[i * cols + c] = d[i * cols + c] + diff;
                            d[j * cols + c] = d[j * cols + c] - diff;
                        }
                    }
                    acc(&mut adj, *x, like(*x, d));
                }
                Op::Custom(x, rule) => {
                    let d = rule(val(*x), y, &g);
                    acc(&mut adj, *x, d);
                }
            }
        }
        for (i, g) in leaves {
            match self.leaf_grads.get_mut(&i) {
                Some(a) => a.add_assign(&g),
                None => {
                    self.leaf_grads.insert(i, g);
                }
            }
        }
        Ok(())
    }
}
