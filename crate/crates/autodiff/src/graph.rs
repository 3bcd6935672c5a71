use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, AutodiffError, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn, permute_offsets};
use crate::tensor::numel;
use crate::{Scalar, Tensor};

/// Additive surrogate for −∞ used when masking attention scores.
pub const MASK_FILL: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Softmax {
        x: Var,
        width: usize,
    },
    LayerNorm {
        x: Var,
        width: usize,
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        keep: Vec<T>,
    },
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Reduce {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        mean: bool,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        offsets: Vec<usize>,
    },
    Custom {
        x: Var,
        grad: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Relu { .. } => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Concat { .. } => "concat",
            Op::Reduce { mean: true, .. } => "mean",
            Op::Reduce { mean: false, .. } => "sum",
            Op::Gather { .. } => "gather",
            Op::MaskedFill { .. } => "masked_fill",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Custom { .. } => "custom",
        }
    }

    fn first_input(&self) -> Option<Var> {
        match self {
            Op::Leaf => None,
            Op::MatMul { a, .. } | Op::Add { a, .. } | Op::Mul { a, .. } => Some(*a),
            Op::Concat { parts, .. } => parts.first().copied(),
            Op::Scale { x, .. }
            | Op::Softmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::Relu { x }
            | Op::Dropout { x, .. }
            | Op::Reduce { x, .. }
            | Op::Gather { x, .. }
            | Op::MaskedFill { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Custom { x, .. } => Some(*x),
        }
    }
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Graphs are built per pass and discarded afterwards; leaves are created with
/// [`Graph::input`] and read back with [`Graph::grad`] after [`Graph::backward`].
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Adds a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(tensor.into_data(), shape, Op::Leaf, requires_grad)
    }

    /// Adds a non-differentiable leaf.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        let tensor = Tensor::new(shape, data)?;
        Ok(self.input(tensor))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a node after [`Graph::backward`]; `None` when the
    /// node does not require gradients or received none.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Matrix product over the last two axes. The right operand is either a
    /// 2-D matrix shared across all leading axes of the left operand, or has
    /// the same leading (batch) axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err("matmul", &sa, &sb);
        }
        let k = sa[sa.len() - 1];
        let n = sb[sb.len() - 1];
        if sb[sb.len() - 2] != k {
            return shape_err("matmul", &sa, &sb);
        }
        let shared_rhs = sb.len() == 2;
        let (batch, m) = if shared_rhs {
            (1, numel(&sa[..sa.len() - 1]))
        } else {
            if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return shape_err("matmul", &sa, &sb);
            }
            (numel(&sa[..sa.len() - 2]), sa[sa.len() - 2])
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for bi in 0..batch {
                let b_off = if shared_rhs { 0 } else { bi * k * n };
                gemm_nn(
                    &av[bi * m * k..(bi + 1) * m * k],
                    &bv[b_off..b_off + k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            out,
            shape,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            rg,
        ))
    }

    /// Orders operands so the second one's shape is a suffix of the first's.
    fn broadcast_pair(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.ends_with(sb) {
            Ok((a, b))
        } else if sb.ends_with(sa) {
            Ok((b, a))
        } else {
            shape_err(op, sa, sb)
        }
    }

    /// Elementwise sum; the smaller operand broadcasts over leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.broadcast_pair("add", a, b)?;
        let bv = self.value(b);
        let w = bv.len().max(1);
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % w])
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, shape, Op::Add { a, b }, rg))
    }

    /// Elementwise product; the smaller operand broadcasts over leading axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.broadcast_pair("mul", a, b)?;
        let bv = self.value(b);
        let w = bv.len().max(1);
        let out: Vec<T> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv[i % w])
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, shape, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(out, shape, Op::Scale { x, factor }, rg)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let width = last_dim("softmax", self.shape(x))?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(out, shape, Op::Softmax { x, width }, rg))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance
    /// (biased variance plus a small stabilizer). No affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let width = last_dim("layer_norm", self.shape(x))?;
        let eps = T::lit(LAYER_NORM_EPS);
        let wf = T::from_usize(width).unwrap();
        let mut out = self.value(x).to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / width);
        for row in out.chunks_mut(width) {
            let mean = row.iter().copied().sum::<T>() / wf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wf;
            let inv = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(out, shape, Op::LayerNorm { x, width, inv_std }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(out, shape, Op::Relu { x }, rg)
    }

    /// Inverted dropout: kept elements are scaled by `1/(1-p)`. The keep mask is
    /// drawn from a ChaCha stream seeded with `seed`. `p = 0` returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return invalid("dropout", format!("probability {p} outside [0, 1)"));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::lit(1.0 / (1.0 - p));
        let keep: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() >= p {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| v * k)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(out, shape, Op::Dropout { x, keep }, rg))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return invalid("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return invalid("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return shape_err("concat", &base, s);
            }
            widths.push(s[axis]);
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let v = self.value(p);
                out.extend_from_slice(&v[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            out,
            shape,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
                outer,
                inner,
            },
            rg,
        ))
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let op = if mean { "mean" } else { "sum" };
        if axis >= s.len() {
            return invalid(op, format!("axis {axis} out of range for {s:?}"));
        }
        let outer = numel(&s[..axis]);
        let len = s[axis];
        let inner = numel(&s[axis + 1..]);
        if mean && len == 0 {
            return invalid(op, "mean over an empty axis");
        }
        let v = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, &val) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += val;
                }
            }
        }
        if mean {
            let lf = T::from_usize(len).unwrap();
            out.iter_mut().for_each(|v| *v /= lf);
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            shape,
            Op::Reduce {
                x,
                outer,
                len,
                inner,
                mean,
            },
            rg,
        ))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Sum along `axis`, which is removed from the shape.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, vec![n])?;
        self.sum(flat, 0)
    }

    /// Selects `indices` along `axis`, in the given order.
    pub fn gather(&mut self, x: Var, indices: &[usize], axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return invalid("gather", format!("axis {axis} out of range for {s:?}"));
        }
        let len = s[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return shape_err("gather", &s, &[bad]);
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                out.extend_from_slice(&v[(o * len + i) * inner..(o * len + i + 1) * inner]);
            }
        }
        let mut shape = s;
        shape[axis] = indices.len();
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            shape,
            Op::Gather {
                x,
                indices: indices.to_vec(),
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Replaces elements where `mask` is true with `value`; those positions
    /// pass no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: T) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return shape_err("masked_fill", self.shape(x), &[mask.len()]);
        }
        let out = self
            .value(x)
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            shape,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(x).len() {
            return shape_err("reshape", self.shape(x), &shape);
        }
        let out = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(out, shape, Op::Reshape { x }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len()
            || axes
                .iter()
                .any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true))
        {
            return shape_err("permute", &s, axes);
        }
        let offsets = permute_offsets(&s, axes);
        let v = self.value(x);
        let out = offsets.iter().map(|&o| v[o]).collect();
        let shape = axes.iter().map(|&a| s[a]).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(out, shape, Op::Permute { x, offsets }, rg))
    }

    /// Scalar node with an externally computed value and gradient with
    /// respect to `x` (a vector-Jacobian product supplied by the caller).
    pub fn attach_loss(&mut self, x: Var, value: T, grad: Vec<T>) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return shape_err("custom", self.shape(x), &[grad.len()]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(vec![value], Vec::new(), Op::Custom { x, grad }, rg))
    }

    /// Fails on the first node holding a non-finite value, with the chain of
    /// operations that produced it.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.value.iter().any(|v| !v.is_finite()) {
                let mut trace = vec![node.op.name()];
                let mut cur = node.op.first_input();
                while let Some(v) = cur {
                    let n = self.node(v);
                    trace.push(n.op.name());
                    cur = n.op.first_input();
                }
                return Err(AutodiffError::NonFinite {
                    node: i,
                    op: node.op.name(),
                    trace: trace.join(" <- "),
                });
            }
        }
        Ok(())
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            );
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = slot(grads, *a, av.len());
                    for bi in 0..batch {
                        let b_off = if *shared_rhs { 0 } else { bi * k * n };
                        gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bv[b_off..b_off + k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(grads, *b, bv.len());
                    for bi in 0..batch {
                        let b_off = if *shared_rhs { 0 } else { bi * k * n };
                        gemm_tn(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[b_off..b_off + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                if self.requires_grad(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (d, &s) in ga.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if self.requires_grad(*b) {
                    let w = self.value(*b).len();
                    let gb = slot(grads, *b, w);
                    for chunk in g.chunks(w) {
                        for (d, &s) in gb.iter_mut().zip(chunk) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let w = bv.len();
                if self.requires_grad(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (j, d) in ga.iter_mut().enumerate() {
                        *d += g[j] * bv[j % w];
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(grads, *b, w);
                    for (j, (&s, &x)) in g.iter().zip(av).enumerate() {
                        gb[j % w] += s * x;
                    }
                }
            }
            Op::Scale { x, factor } => {
                let gx = slot(grads, *x, g.len());
                for (d, &s) in gx.iter_mut().zip(g) {
                    *d += s * *factor;
                }
            }
            Op::Softmax { x, width } => {
                let y = &node.value;
                let gx = slot(grads, *x, g.len());
                for ((gr, yr), dr) in g
                    .chunks(*width)
                    .zip(y.chunks(*width))
                    .zip(gx.chunks_mut(*width))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += yv * (gv - dot);
                    }
                }
            }
            Op::LayerNorm { x, width, inv_std } => {
                let y = &node.value;
                let wf = T::from_usize(*width).unwrap();
                let gx = slot(grads, *x, g.len());
                for (((gr, yr), dr), &inv) in g
                    .chunks(*width)
                    .zip(y.chunks(*width))
                    .zip(gx.chunks_mut(*width))
                    .zip(inv_std)
                {
                    let mean_g = gr.iter().copied().sum::<T>() / wf;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / wf;
                    for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += inv * (gv - mean_g - yv * mean_gy);
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let gx = slot(grads, *x, g.len());
                for ((d, &s), &v) in gx.iter_mut().zip(g).zip(xv) {
                    if v > T::zero() {
                        *d += s;
                    }
                }
            }
            Op::Dropout { x, keep } => {
                let gx = slot(grads, *x, g.len());
                for ((d, &s), &k) in gx.iter_mut().zip(g).zip(keep) {
                    *d += s * k;
                }
            }
            Op::Concat {
                parts,
                widths,
                outer,
                inner,
            } => {
                let total: usize = widths.iter().sum();
                let mut start = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if self.requires_grad(p) {
                        let gp = slot(grads, p, outer * w * inner);
                        for o in 0..*outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + w) * inner];
                            for (d, &s) in gp[o * w * inner..(o + 1) * w * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    start += w;
                }
            }
            Op::Reduce {
                x,
                outer,
                len,
                inner,
                mean,
            } => {
                let factor = if *mean {
                    T::one() / T::from_usize(*len).unwrap()
                } else {
                    T::one()
                };
                let gx = slot(grads, *x, outer * len * inner);
                for o in 0..*outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..*len {
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s * factor;
                        }
                    }
                }
            }
            Op::Gather {
                x,
                indices,
                outer,
                len,
                inner,
            } => {
                let gx = slot(grads, *x, outer * len * inner);
                let n_idx = indices.len();
                for o in 0..*outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let src = &g[(o * n_idx + j) * inner..(o * n_idx + j + 1) * inner];
                        let dst = &mut gx[(o * len + i) * inner..(o * len + i + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::MaskedFill { x, mask } => {
                let gx = slot(grads, *x, g.len());
                for ((d, &s), &m) in gx.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *d += s;
                    }
                }
            }
            Op::Reshape { x } => {
                let gx = slot(grads, *x, g.len());
                for (d, &s) in gx.iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Permute { x, offsets } => {
                let gx = slot(grads, *x, g.len());
                for (&o, &s) in offsets.iter().zip(g) {
                    gx[o] += s;
                }
            }
            Op::Custom { x, grad } => {
                let gx = slot(grads, *x, grad.len());
                let up = g[0];
                for (d, &s) in gx.iter_mut().zip(grad) {
                    *d += up * s;
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    match shape.last() {
        Some(&w) if w > 0 => Ok(w),
        _ => invalid(op, format!("needs a non-empty last axis, got {shape:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, shape: &[usize], data: Vec<f64>) -> Var {
        g.input(Tensor::new(shape.to_vec(), data).unwrap().with_grad())
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[2], vec![0.0, 0.0]);
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[1, 4], vec![3.0; 4]);
        let y = g.layer_norm(x).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_reports_both_shapes_on_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2, 3], vec![0.0; 6]);
        let b = leaf(&mut g, &[2, 2], vec![0.0; 4]);
        match g.matmul(a, b) {
            Err(AutodiffError::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn masked_fill_with_no_mask_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[3], vec![1.0, -2.0, 3.5]);
        let y = g.masked_fill(x, &[false; 3], MASK_FILL).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn masked_positions_get_exactly_zero_weight() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[4], vec![0.3, 5.0, -1.0, 2.0]);
        let y = g.masked_fill(x, &[false, true, false, true], MASK_FILL).unwrap();
        let p = g.softmax(y).unwrap();
        let w = g.value(p);
        assert_eq!(w[1], 0.0);
        assert_eq!(w[3], 0.0);
        assert!((w[0] + w[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dropout_zero_is_identity_and_seeded_is_deterministic() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[100], (0..100).map(|i| i as f64).collect());
        assert_eq!(g.dropout(x, 0.0, 1).unwrap(), x);
        let a = g.dropout(x, 0.3, 7).unwrap();
        let b = g.dropout(x, 0.3, 7).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g.dropout(x, 1.0, 7).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut g = Graph::<f64>::new();
        let n = 200_000;
        let x = g.input(Tensor::full(vec![n], 1.0));
        let y = g.dropout(x, 0.1, 42).unwrap();
        let mean = g.value(y).iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gather_rejects_out_of_range_index() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[15, 2], vec![0.0; 30]);
        assert!(matches!(
            g.gather(x, &[4, 9, 15], 0),
            Err(AutodiffError::Shape { .. })
        ));
        let y = g.gather(x, &[4, 9, 14], 0).unwrap();
        assert_eq!(g.shape(y), &[3, 2]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[2], vec![1.0, 2.0]);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn check_finite_reports_offending_op() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, &[2], vec![1.0, f64::MAX]);
        let y = g.scale(x, 10.0);
        let _ = g.relu(y);
        match g.check_finite() {
            Err(AutodiffError::NonFinite { op, trace, .. }) => {
                assert_eq!(op, "scale");
                assert_eq!(trace, "scale <- leaf");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn batched_matmul_matches_per_batch_products() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, &[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut g, &[2, 2, 1], vec![1.0, 1.0, 2.0, 0.0]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1, 1]);
        assert_eq!(g.value(c), &[3.0, 6.0]);
    }
}
