use std::sync::atomic::{AtomicU64, Ordering};

use super::broadcast::{broadcast_shape, for_each_pair};
use super::kernels::{add_into, gemm};
use super::{axis_extents, Result, Tensor, TensorError};

/// Variance floor used by [`Tape::layernorm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn index(&self) -> usize {
        self.id
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    ClampMin(usize, f64),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    DepthwiseConv {
        x: usize,
        kernel: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    MaxOverAxis {
        input: usize,
        argmax: Vec<usize>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
    Pick {
        input: usize,
        indices: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::ClampMin(a, _)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Softmax { input, .. }
            | Op::MaxOverAxis { input, .. }
            | Op::Dropout { input, .. }
            | Op::Pick { input, .. } => vec![*input],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::DepthwiseConv { x, kernel } => vec![*x, *kernel],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Embedding { table, .. } => vec![*table],
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Node ids are assigned in creation order, so every node's inputs precede it
/// and reverse creation order is a valid backward schedule.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        &self.nodes[v.id]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient, `None` when `v` was never reached by a backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    /// Accumulated gradient as a tensor, zeros when none was populated.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        let node = self.node(v);
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `(output, inputs)` for every recorded node, in recording order.
    pub fn records(&self) -> impl Iterator<Item = (usize, Vec<usize>)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.op.inputs()))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        v.id
    }

    // ---- elementwise -----------------------------------------------------

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, usize, usize)> {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out_shape =
            broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| TensorError::DimensionMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })?;
        let mut out = Tensor::zeros(out_shape.clone());
        let (da, db) = (ta.data(), tb.data());
        let od = out.data_mut();
        for_each_pair(ta.shape(), tb.shape(), &out_shape, |o, x, y| {
            od[o] = f(da[x], db[y])
        });
        Ok((out, ia, ib))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Var {
        let ia = self.check(a);
        let src = &self.nodes[ia].value;
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        self.push(out, op(ia))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, |i| Op::Scale(i, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    /// Natural log; the caller keeps inputs positive (see [`Tape::clamp_min`]).
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), |i| Op::ClampMin(i, floor))
    }

    /// Multiplies by a fixed mask (typically 0 or `1/(1-p)` entries).
    pub fn dropout(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let ia = self.check(a);
        let src = &self.nodes[ia].value;
        if src.shape() != mask.shape() {
            return Err(TensorError::DimensionMismatch {
                op: "dropout",
                lhs: src.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data = src.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Op::Dropout {
                input: ia,
                mask: mask.data().to_vec(),
            },
        ))
    }

    // ---- linear algebra --------------------------------------------------

    /// Matrix product over the last two axes.
    ///
    /// `b` is either rank 2 (shared across all leading axes of `a`) or has the
    /// same leading (batch) axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out = matmul_forward(ta, tb)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ia = self.check(a);
        let src = &self.nodes[ia].value;
        let out = permute_tensor(src, axes)?;
        Ok(self.push(out, Op::Permute(ia, axes.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(TensorError::AxisOutOfRange {
                op: "transpose",
                axis: 1,
                rank,
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a);
        let out = self.nodes[ia].value.clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(ia)))
    }

    // ---- normalisation ---------------------------------------------------

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Softmax restricted to entries where `mask` is non-zero.
    ///
    /// `mask` broadcasts against `a`. Masked entries come out exactly 0; a
    /// fully masked slice is all zeros.
    pub fn masked_softmax(&mut self, a: Var, axis: usize, mask: &Tensor) -> Result<Var> {
        self.softmax_impl(a, axis, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, mask: Option<&Tensor>) -> Result<Var> {
        let ia = self.check(a);
        let src = &self.nodes[ia].value;
        if axis >= src.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: src.rank(),
            });
        }
        let expanded;
        let mask = match mask {
            Some(m) if m.shape() != src.shape() => {
                if broadcast_shape(src.shape(), m.shape()).as_deref() != Some(src.shape()) {
                    return Err(TensorError::DimensionMismatch {
                        op: "masked_softmax",
                        lhs: src.shape().to_vec(),
                        rhs: m.shape().to_vec(),
                    });
                }
                let mut full = vec![0.0; src.numel()];
                for_each_pair(src.shape(), m.shape(), src.shape(), |o, _, im| {
                    full[o] = m.data()[im]
                });
                expanded = Tensor::new(src.shape().to_vec(), full)?;
                Some(&expanded)
            }
            other => other,
        };
        let (outer, len, inner) = axis_extents(src.shape(), axis);
        let x = src.data();
        let keep = |i: usize| mask.is_none_or(|m| m.data()[i] != 0.0);
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    if keep(idx(j)) {
                        max = max.max(x[idx(j)]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for j in 0..len {
                    if keep(idx(j)) {
                        let e = (x[idx(j)] - max).exp();
                        y[idx(j)] = e;
                        total += e;
                    }
                }
                for j in 0..len {
                    y[idx(j)] /= total;
                }
            }
        }
        let out = Tensor::new(src.shape().to_vec(), y)?;
        Ok(self.push(out, Op::Softmax { input: ia, axis }))
    }

    /// Layer normalisation over the last axis followed by a per-feature affine map.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x), self.check(gain), self.check(bias));
        let (tx, tg, tb) = (
            &self.nodes[ix].value,
            &self.nodes[ig].value,
            &self.nodes[ib].value,
        );
        let d = *tx.shape().last().ok_or(TensorError::AxisOutOfRange {
            op: "layernorm",
            axis: 0,
            rank: 0,
        })?;
        for t in [tg, tb] {
            if t.shape() != [d] {
                return Err(TensorError::DimensionMismatch {
                    op: "layernorm",
                    lhs: tx.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let rows = tx.numel() / d.max(1);
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                y[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), y)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                xhat,
                rstd,
            },
        ))
    }

    // ---- convolution & pooling -------------------------------------------

    /// Per-channel 1-D cross-correlation over the second-to-last axis with
    /// zero "same" padding. `x` is `[..., len, d]`, `kernel` is `[k, d]`, `k` odd.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (ix, ik) = (self.check(x), self.check(kernel));
        let (tx, tk) = (&self.nodes[ix].value, &self.nodes[ik].value);
        if tk.rank() != 2 || tx.rank() < 2 || tk.shape()[1] != tx.shape()[tx.rank() - 1] {
            return Err(TensorError::DimensionMismatch {
                op: "depthwise_conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let k = tk.shape()[0];
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel(k));
        }
        let geom = ConvGeom::new(tx.shape(), k);
        let mut y = vec![0.0; tx.numel()];
        geom.visit(|out, inp, tap| y[out] += tk.data()[tap] * tx.data()[inp]);
        let out = Tensor::new(tx.shape().to_vec(), y)?;
        Ok(self.push(out, Op::DepthwiseConv { x: ix, kernel: ik }))
    }

    /// Maximum along `axis`; the subgradient goes to the first maximiser.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a);
        let src = &self.nodes[ia].value;
        if axis >= src.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "max_over_axis",
                axis,
                rank: src.rank(),
            });
        }
        let (outer, len, inner) = axis_extents(src.shape(), axis);
        let mut shape = src.shape().to_vec();
        shape.remove(axis);
        let mut y = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for j in 1..len {
                    let idx = base + j * inner;
                    if src.data()[idx] > src.data()[best] {
                        best = idx;
                    }
                }
                y.push(src.data()[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::new(shape, y)?;
        Ok(self.push(out, Op::MaxOverAxis { input: ia, argmax }))
    }

    // ---- structural ------------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let ids: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect();
        let first = self.nodes[ids[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &i in &ids {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(TensorError::DimensionMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut y = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in &ids {
                let t = &self.nodes[i].value;
                let block = t.shape()[axis] * inner;
                y.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, y)?;
        Ok(self.push(out, Op::Concat { inputs: ids, axis }))
    }

    /// Row lookup: output shape is `ids_shape ++ [d]` for a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let it = self.check(table);
        let t = &self.nodes[it].value;
        if t.rank() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(TensorError::DimensionMismatch {
                op: "embedding",
                lhs: t.shape().to_vec(),
                rhs: ids_shape.to_vec(),
            });
        }
        let out = gather_rows(t, ids, ids_shape)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Selects one entry of the last axis per leading position.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.check(a);
        let src = &self.nodes[ia].value;
        let n = *src.shape().last().unwrap_or(&1);
        let rows = src.numel() / n.max(1);
        if src.rank() == 0 || indices.len() != rows {
            return Err(TensorError::DimensionMismatch {
                op: "pick",
                lhs: src.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let mut flat = Vec::with_capacity(rows);
        for (r, &j) in indices.iter().enumerate() {
            if j >= n {
                return Err(TensorError::IdOutOfRange {
                    op: "pick",
                    index: j,
                    bound: n,
                });
            }
            flat.push(r * n + j);
        }
        let y = flat.iter().map(|&i| src.data()[i]).collect();
        let out = Tensor::new(src.shape()[..src.rank() - 1].to_vec(), y)?;
        Ok(self.push(
            out,
            Op::Pick {
                input: ia,
                indices: flat,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let s = self.nodes[ia].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(ia))
    }

    // ---- backward --------------------------------------------------------

    /// Accumulates `d loss / d v` into every `requires_grad` ancestor of `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.tape != self.id || loss.id >= self.nodes.len() {
            return Err(TensorError::DetachedTensor);
        }
        let root = &self.nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        adj[loss.id] = Some(vec![1.0]);
        for i in (0..=loss.id).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => add_into(acc, &g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let need = |j: usize| nodes[j].requires_grad;
        let val = |j: usize| &nodes[j].value;
        let mut send = |j: usize, contrib: Vec<f64>| match &mut adj[j] {
            Some(acc) => add_into(acc, &contrib),
            slot @ None => *slot = Some(contrib),
        };
        let out_shape = nodes[i].value.shape();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let mut ga = need(*a).then(|| vec![0.0; val(*a).numel()]);
                let mut gb = need(*b).then(|| vec![0.0; val(*b).numel()]);
                for_each_pair(sa, sb, out_shape, |o, x, y| {
                    if let Some(ga) = ga.as_mut() {
                        ga[x] += g[o];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[y] += sign * g[o];
                    }
                });
                if let Some(ga) = ga {
                    send(*a, ga);
                }
                if let Some(gb) = gb {
                    send(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = need(*a).then(|| vec![0.0; ta.numel()]);
                let mut gb = need(*b).then(|| vec![0.0; tb.numel()]);
                for_each_pair(ta.shape(), tb.shape(), out_shape, |o, x, y| {
                    if let Some(ga) = ga.as_mut() {
                        ga[x] += g[o] * tb.data()[y];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[y] += g[o] * ta.data()[x];
                    }
                });
                if let Some(ga) = ga {
                    send(*a, ga);
                }
                if let Some(gb) = gb {
                    send(*b, gb);
                }
            }
            Op::Scale(a, s) => {
                if need(*a) {
                    send(*a, g.iter().map(|v| v * s).collect());
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if need(*a) {
                    send(*a, g.to_vec());
                }
            }
            Op::Relu(a) => {
                if need(*a) {
                    let x = val(*a).data();
                    send(
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Op::Sigmoid(a) => {
                if need(*a) {
                    let y = nodes[i].value.data();
                    send(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
            }
            Op::Log(a) => {
                if need(*a) {
                    let x = val(*a).data();
                    send(*a, g.iter().zip(x).map(|(g, x)| g / x).collect());
                }
            }
            Op::ClampMin(a, floor) => {
                if need(*a) {
                    let x = val(*a).data();
                    send(
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(g, &x)| if x > *floor { *g } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Op::Dropout { input, mask } => {
                if need(*input) {
                    send(*input, g.iter().zip(mask).map(|(g, m)| g * m).collect());
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (ga, gb) = matmul_backward(ta, tb, g, need(*a), need(*b));
                if let Some(ga) = ga {
                    send(*a, ga);
                }
                if let Some(gb) = gb {
                    send(*b, gb);
                }
            }
            Op::Permute(a, axes) => {
                if need(*a) {
                    let mut inverse = vec![0; axes.len()];
                    for (o, &ax) in axes.iter().enumerate() {
                        inverse[ax] = o;
                    }
                    let gt = Tensor::new(out_shape.to_vec(), g.to_vec()).expect("grad shape");
                    send(
                        *a,
                        permute_tensor(&gt, &inverse).expect("inverse permutation").into_data(),
                    );
                }
            }
            Op::Softmax { input, axis } => {
                if need(*input) {
                    let y = nodes[i].value.data();
                    let (outer, len, inner) = axis_extents(out_shape, *axis);
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for k in 0..inner {
                            let base = o * len * inner + k;
                            let dot: f64 = (0..len)
                                .map(|j| g[base + j * inner] * y[base + j * inner])
                                .sum();
                            for j in 0..len {
                                let idx = base + j * inner;
                                gx[idx] = y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                    send(*input, gx);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = val(*gain).data();
                let d = gv.len();
                let rows = rstd.len();
                let mut gx = need(*x).then(|| vec![0.0; xhat.len()]);
                let mut gg = need(*gain).then(|| vec![0.0; d]);
                let mut gbias = need(*bias).then(|| vec![0.0; d]);
                let mut gh = vec![0.0; d];
                for r in 0..rows {
                    let row = r * d..(r + 1) * d;
                    let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                    if let Some(gg) = gg.as_mut() {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    if let Some(gb) = gbias.as_mut() {
                        add_into(gb, gr);
                    }
                    if let Some(gx) = gx.as_mut() {
                        for j in 0..d {
                            gh[j] = gr[j] * gv[j];
                        }
                        let mean_gh = gh.iter().sum::<f64>() / d as f64;
                        let mean_ghh =
                            gh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = rstd[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
                        }
                    }
                }
                if let Some(gx) = gx {
                    send(*x, gx);
                }
                if let Some(gg) = gg {
                    send(*gain, gg);
                }
                if let Some(gb) = gbias {
                    send(*bias, gb);
                }
            }
            Op::DepthwiseConv { x, kernel } => {
                let (tx, tk) = (val(*x), val(*kernel));
                let geom = ConvGeom::new(tx.shape(), tk.shape()[0]);
                let mut gx = need(*x).then(|| vec![0.0; tx.numel()]);
                let mut gk = need(*kernel).then(|| vec![0.0; tk.numel()]);
                geom.visit(|out, inp, tap| {
                    if let Some(gx) = gx.as_mut() {
                        gx[inp] += tk.data()[tap] * g[out];
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[tap] += tx.data()[inp] * g[out];
                    }
                });
                if let Some(gx) = gx {
                    send(*x, gx);
                }
                if let Some(gk) = gk {
                    send(*kernel, gk);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_extents(out_shape, *axis);
                let mut offset = 0;
                let total_block = out_shape[*axis] * inner;
                for &j in inputs {
                    let block = val(j).shape()[*axis] * inner;
                    if need(j) {
                        let mut gj = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let start = o * total_block + offset;
                            gj.extend_from_slice(&g[start..start + block]);
                        }
                        send(j, gj);
                    }
                    offset += block;
                }
            }
            Op::MaxOverAxis { input, argmax } => {
                if need(*input) {
                    let mut gx = vec![0.0; val(*input).numel()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                    send(*input, gx);
                }
            }
            Op::Embedding { table, ids } => {
                if need(*table) {
                    let d = val(*table).shape()[1];
                    let mut gt = vec![0.0; val(*table).numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                    send(*table, gt);
                }
            }
            Op::Sum(a) => {
                if need(*a) {
                    send(*a, vec![g[0]; val(*a).numel()]);
                }
            }
            Op::Mean(a) => {
                if need(*a) {
                    let n = val(*a).numel();
                    send(*a, vec![g[0] / n as f64; n]);
                }
            }
            Op::Pick { input, indices } => {
                if need(*input) {
                    let mut gx = vec![0.0; val(*input).numel()];
                    for (o, &src) in indices.iter().enumerate() {
                        gx[src] += g[o];
                    }
                    send(*input, gx);
                }
            }
        }
    }
}

/// Depthwise convolution followed by a pointwise (1×1) channel mix and bias.
///
/// `x: [..., len, d]`, `depth_kernel: [k, d]`, `point_kernel: [d, d_out]`,
/// `bias: [d_out]`; the sequence length is preserved.
pub fn depthwise_separable_conv1d(
    tape: &mut Tape,
    x: Var,
    depth_kernel: Var,
    point_kernel: Var,
    bias: Var,
) -> Result<Var> {
    let k = tape.shape(depth_kernel)[0];
    if k.is_multiple_of(2) {
        return Err(TensorError::EvenKernel(k));
    }
    let d_out = tape.shape(point_kernel).get(1).copied();
    if tape.shape(bias) != [d_out.unwrap_or(0)] {
        return Err(TensorError::DimensionMismatch {
            op: "depthwise_separable_conv1d",
            lhs: tape.shape(point_kernel).to_vec(),
            rhs: tape.shape(bias).to_vec(),
        });
    }
    let depth = tape.depthwise_conv1d(x, depth_kernel)?;
    let mixed = tape.matmul(depth, point_kernel)?;
    tape.add(mixed, bias)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index geometry of a same-padded depthwise convolution.
struct ConvGeom {
    batch: usize,
    len: usize,
    d: usize,
    k: usize,
}

impl ConvGeom {
    fn new(shape: &[usize], k: usize) -> Self {
        let r = shape.len();
        let (len, d) = (shape[r - 2], shape[r - 1]);
        Self {
            batch: shape[..r - 2].iter().product(),
            len,
            d,
            k,
        }
    }

    /// Calls `f(output_index, input_index, kernel_index)` for every tap that
    /// lands inside the (unpadded) input.
    fn visit(&self, mut f: impl FnMut(usize, usize, usize)) {
        let half = (self.k / 2) as isize;
        for b in 0..self.batch {
            let base = b * self.len * self.d;
            for t in 0..self.len {
                for j in 0..self.k {
                    let src = t as isize + j as isize - half;
                    if src < 0 || src >= self.len as isize {
                        continue;
                    }
                    let out_row = base + t * self.d;
                    let in_row = base + src as usize * self.d;
                    let tap_row = j * self.d;
                    for c in 0..self.d {
                        f(out_row + c, in_row + c, tap_row + c);
                    }
                }
            }
        }
    }
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, bool)> {
    let mismatch = || TensorError::DimensionMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || rb < 2 {
        return Err(mismatch());
    }
    let k = a.shape()[ra - 1];
    if b.shape()[rb - 2] != k {
        return Err(mismatch());
    }
    let n = b.shape()[rb - 1];
    if rb == 2 {
        // shared right operand: flatten all leading axes of `a`
        return Ok((1, a.numel() / k.max(1), k, n, true));
    }
    if ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] {
        return Err(mismatch());
    }
    let batch = a.shape()[..ra - 2].iter().product();
    Ok((batch, a.shape()[ra - 2], k, n, false))
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, m, k, n, _) = matmul_dims(a, b)?;
    let mut shape = a.shape()[..a.rank() - 1].to_vec();
    shape.push(n);
    let mut c = vec![0.0; batch * m * n];
    for p in 0..batch {
        gemm(
            m,
            k,
            n,
            &a.data()[p * m * k..(p + 1) * m * k],
            false,
            &b.data()[p * k * n..(p + 1) * k * n],
            false,
            &mut c[p * m * n..(p + 1) * m * n],
            false,
        );
    }
    Tensor::new(shape, c)
}

fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    g: &[f64],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (batch, m, k, n, _) = matmul_dims(a, b).expect("validated in forward");
    let mut ga = need_a.then(|| vec![0.0; a.numel()]);
    let mut gb = need_b.then(|| vec![0.0; b.numel()]);
    for p in 0..batch {
        let gp = &g[p * m * n..(p + 1) * m * n];
        let ap = &a.data()[p * m * k..(p + 1) * m * k];
        let bp = &b.data()[p * k * n..(p + 1) * k * n];
        if let Some(ga) = ga.as_mut() {
            // dA = G · Bᵀ
            gemm(m, n, k, gp, false, bp, true, &mut ga[p * m * k..(p + 1) * m * k], false);
        }
        if let Some(gb) = gb.as_mut() {
            // dB = Aᵀ · G
            gemm(k, m, n, ap, true, gp, false, &mut gb[p * k * n..(p + 1) * k * n], false);
        }
    }
    (ga, gb)
}

fn permute_tensor(src: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = src.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(TensorError::DimensionMismatch {
            op: "permute",
            lhs: src.shape().to_vec(),
            rhs: axes.to_vec(),
        });
    }
    for &ax in axes {
        if ax >= rank || seen[ax] {
            return Err(TensorError::AxisOutOfRange {
                op: "permute",
                axis: ax,
                rank,
            });
        }
        seen[ax] = true;
    }
    let shape: Vec<usize> = axes.iter().map(|&ax| src.shape()[ax]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * src.shape()[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let total = src.numel();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(src.data()[offset]);
        let mut axis = rank;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < shape[axis] {
                break;
            }
            offset -= strides[axis] * shape[axis];
            idx[axis] = 0;
        }
    }
    Tensor::new(shape, out)
}

/// Plain (untaped) row gather, shared with frozen-table lookups.
pub(crate) fn gather_rows(table: &Tensor, ids: &[usize], ids_shape: &[usize]) -> Result<Tensor> {
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut y = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(TensorError::IdOutOfRange {
                op: "embedding",
                index: id,
                bound: v,
            });
        }
        y.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    let mut shape = ids_shape.to_vec();
    shape.push(d);
    Tensor::new(shape, y)
}
