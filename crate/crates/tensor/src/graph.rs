//! The gradient tape.
//!
//! A [`Graph`] records every differentiable operation as it executes. Each
//! node owns its output value; [`Graph::backward`] walks the records in exact
//! reverse order and returns a [`Gradients`] bundle. The tape is single-use.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::broadcast::{broadcast_shape, zip_map};
use crate::kernels::conv::ConvGeom;
use crate::params::{BufferId, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnKind {
    Relu,
    Sigmoid,
    Log,
    Exp,
    Clamp(f64, f64),
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
    },
    AddScalar(Var),
    MulScalar(Var, T),
    Unary {
        kind: UnKind,
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        invstd: Vec<T>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        mean: Vec<T>,
        invstd: Vec<T>,
    },
    Resize {
        x: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Unary { x, .. }
            | Op::Reshape(x)
            | Op::Permute { x, .. }
            | Op::Narrow { x, .. }
            | Op::Softmax { x, .. }
            | Op::Sum(x)
            | Op::SumAxis { x, .. }
            | Op::Resize { x } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Conv2d { x, w, b, .. } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::LayerNorm { x, gamma, beta, .. } => {
                [Some(*x), *gamma, *beta].into_iter().flatten().collect()
            }
            Op::Gather { table, .. } => vec![*table],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Binary { kind, .. } => match kind {
                BinKind::Add => "add",
                BinKind::Sub => "sub",
                BinKind::Mul => "mul",
                BinKind::Div => "div",
            },
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Unary { kind, .. } => match kind {
                UnKind::Relu => "relu",
                UnKind::Sigmoid => "sigmoid",
                UnKind::Log => "log",
                UnKind::Exp => "exp",
                UnKind::Clamp(..) => "clamp",
            },
            Op::MatMul { .. } => "matmul",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Softmax { .. } => "softmax",
            Op::Sum(_) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Resize { .. } => "bilinear_resize",
            Op::Gather { .. } => "gather_rows",
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Whether layers with batch statistics use them (`Train`) or their running
/// estimates (`Eval`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A single-use gradient tape.
pub struct Graph<'s, T: Real> {
    store: Option<&'s ParamStore<T>>,
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
    param_vars: HashMap<ParamId, Var>,
    buffer_updates: Vec<(BufferId, Tensor<T>)>,
    finished: bool,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real> {
    leaves: HashMap<Var, Tensor<T>>,
    params: Vec<(ParamId, Var)>,
    buffers: Vec<(BufferId, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf (input or parameter).
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.leaves.get(v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.leaves.get(v).map(|g| (*p, g)))
    }

    /// Accumulates parameter gradients into `store` and commits any running
    /// statistics gathered during the forward pass.
    pub fn apply(self, store: &mut ParamStore<T>) {
        for (id, v) in &self.params {
            if let Some(g) = self.leaves.get(v) {
                store.accumulate(*id, g);
            }
        }
        for (id, value) in self.buffers {
            store.set_buffer(id, value);
        }
    }
}

impl<'s, T: Real> Graph<'s, T> {
    /// A tape without parameters, for free-standing tensor maths.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            mode: Mode::Train,
            param_vars: HashMap::new(),
            buffer_updates: Vec::new(),
            finished: false,
        }
    }

    pub fn with_params(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            store: Some(store),
            mode,
            ..Self::new()
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store.expect("graph was created without a parameter store")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert!(!self.finished, "graph values were released by backward()");
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        #[cfg(debug_assertions)]
        if !value.is_finite() && inputs.iter().all(|i| self.nodes[i.0].value.is_finite()) {
            panic!("{} produced non-finite output from finite inputs", op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input whose gradient is reported by `backward`.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Brings a parameter onto the tape (once per tape). Frozen parameters
    /// enter as constants.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let p = self.store().param(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            requires_grad: !p.frozen,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn buffer(&self, id: BufferId) -> &'s Tensor<T> {
        self.store().buffer(id)
    }

    /// Queues a new value for a buffer; committed by [`Gradients::apply`]
    /// or [`Graph::take_buffer_updates`].
    pub fn update_buffer(&mut self, id: BufferId, value: Tensor<T>) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let op = Op::<T>::Binary { kind, a, b }.name();
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::mismatch(op, &sa, &sb))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = match kind {
            BinKind::Add => zip_map(&out, va, &sa, vb, &sb, |x, y| x + y),
            BinKind::Sub => zip_map(&out, va, &sa, vb, &sb, |x, y| x - y),
            BinKind::Mul => zip_map(&out, va, &sa, vb, &sb, |x, y| x * y),
            BinKind::Div => zip_map(&out, va, &sa, vb, &sb, |x, y| x / y),
        };
        let value = Tensor::new(out, data)?;
        Ok(self.push(value, Op::Binary { kind, a, b }))
    }

    /// Broadcasting `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::MulScalar(x, c))
    }

    fn unary(&mut self, kind: UnKind, x: Var) -> Var {
        let value = {
            let t = self.value(x);
            match kind {
                UnKind::Relu => t.map(|v| if v > T::zero() { v } else { T::zero() }),
                UnKind::Sigmoid => t.map(sigmoid),
                UnKind::Log => t.map(T::ln),
                UnKind::Exp => t.map(T::exp),
                UnKind::Clamp(lo, hi) => {
                    let (lo, hi) = (T::lit(lo), T::lit(hi));
                    t.map(|v| v.max(lo).min(hi))
                }
            }
        };
        self.push(value, Op::Unary { kind, x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnKind::Sigmoid, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnKind::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnKind::Exp, x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(UnKind::Clamp(lo, hi), x)
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dim("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut oshape: Vec<usize> = shape.clone();
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TensorError::dim("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.mul_scalar(s, 1.0 / n as f64))
    }

    /// Numerically stable softmax along `axis`; every slice sums to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dim("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = T::neg_infinity();
                for j in 0..n {
                    m = m.max(src[base + j * inner]);
                }
                let mut z = T::zero();
                for j in 0..n {
                    let e = (src[base + j * inner] - m).exp();
                    out[base + j * inner] = e;
                    z += e;
                }
                let inv = T::one() / z;
                for j in 0..n {
                    out[base + j * inner] *= inv;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Collapses every dimension from `from` onwards into one.
    pub fn flatten(&mut self, x: Var, from: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if from >= shape.len() {
            return Err(TensorError::dim("flatten", format!("axis {from} for shape {shape:?}")));
        }
        let mut s = shape[..from].to_vec();
        s.push(numel(&shape[from..]));
        self.reshape(x, s)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::dim(
                "permute",
                format!("axes {axes:?} are not a permutation for shape {shape:?}"),
            ));
        }
        let value = permute_tensor(self.value(x), axes);
        Ok(self.push(
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let rank = self.shape(x).len();
        if a >= rank || b >= rank {
            return Err(TensorError::dim("transpose", format!("axes ({a}, {b}) for rank {rank}")));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a, b);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| TensorError::dim("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::dim("concat", format!("axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::dim(
                "narrow",
                format!("range {start}..{} of axis {axis} in {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }))
    }

    /// Rows of a `[V, D]` table, as `[ids.len(), D]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::dim("gather_rows", format!("table shape {shape:?}")));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::dim("gather_rows", format!("row {bad} of {v}")));
        }
        if ids.is_empty() {
            return Err(TensorError::dim("gather_rows", "no ids"));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Differentiates the scalar `loss` with respect to every leaf that
    /// requires a gradient, then releases the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.finished {
            return Err(TensorError::Usage(
                "backward() already ran on this graph".to_owned(),
            ));
        }
        let shape = self.shape(loss).to_vec();
        if numel(&shape) != 1 {
            return Err(TensorError::Usage(format!(
                "backward() needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
                continue;
            }
            crate::backward::propagate(&self.nodes, i, &g, &mut grads);
        }

        let mut leaves = HashMap::new();
        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                continue;
            }
            let var = Var(i);
            match node.op {
                Op::Leaf => {}
                Op::Param(id) => params.push((id, var)),
                _ => continue,
            }
            let g = grads[i]
                .take()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
            leaves.insert(var, g);
        }
        self.nodes.clear();
        self.finished = true;
        Ok(Gradients {
            leaves,
            params,
            buffers: std::mem::take(&mut self.buffer_updates),
        })
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `(prod(shape[..axis]), shape[axis], prod(shape[axis+1..]))`
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

pub(crate) fn permute_tensor<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let st = crate::tensor::strides(shape);
    let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let ost: Vec<usize> = axes.iter().map(|&a| st[a]).collect();
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    let rank = oshape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..src.len() {
        out.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += ost[d];
            if idx[d] < oshape[d] {
                break;
            }
            off -= ost[d] * oshape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(oshape, out).expect("permutation preserves size")
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
