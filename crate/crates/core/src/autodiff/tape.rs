//! The computation record and its reverse sweep.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, Real, Tensor};
use super::AutodiffError;

/// Lower clamp applied to probabilities inside the unfused cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { trainable: bool },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddBias(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    CrossEntropy { probs: Var, labels: Tensor<T> },
    SoftmaxCrossEntropy { logits: Var, labels: Tensor<T>, probs: Tensor<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Dropout { input: Var, mask: Vec<T> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of tensor operations.
///
/// Nodes are stored in creation order, which is already a topological order
/// since an op can only reference existing nodes. [`Tape::backward`] walks
/// them once in reverse.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&v)
    }

    /// Gradient for a leaf; panics if `v` has none.
    pub fn wrt(&self, v: Var) -> &Tensor<T> {
        self.by_leaf
            .get(&v)
            .unwrap_or_else(|| panic!("no gradient recorded for {v:?}"))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.by_leaf.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn mismatch<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax over the last axis with max subtraction.
fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let k = *x.shape().last().expect("softmax needs rank ≥ 1");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf (inputs, constants).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Trainable leaf; always receives a gradient from [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2("matmul").map_err(|_| mismatch("matmul", va, vb))?;
        let (k2, n) = vb.dims2("matmul").map_err(|_| mismatch("matmul", va, vb))?;
        if k != k2 {
            return Err(mismatch("matmul", va, vb));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, va.data(), false, vb.data(), false, T::zero(), out.data_mut());
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    /// `x + b` where `b` is a vector matching the last axis of `x`.
    ///
    /// This is the one explicit broadcast the engine offers; it exists for
    /// layer biases.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (vx, vb) = (self.value(x), self.value(b));
        let f = *vx.shape().last().unwrap_or(&0);
        if vb.rank() != 1 || vb.numel() != f || f == 0 {
            return Err(mismatch("add_bias", vx, vb));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(f) {
            for (o, &bj) in row.iter_mut().zip(vb.data()) {
                *o += bj;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(stable_sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        if va.rank() == 0 || *va.shape().last().unwrap() < 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax",
                left: va.shape().to_vec(),
                right: vec![],
            });
        }
        let out = softmax_rows(va);
        Ok(self.push(out, Op::Softmax(a)))
    }

    fn check_labels(&self, op: &'static str, x: Var, labels: &Tensor<T>) -> Result<usize, AutodiffError> {
        let vx = self.value(x);
        if vx.rank() != 2 || vx.shape() != labels.shape() || vx.shape()[0] == 0 {
            return Err(mismatch(op, vx, labels));
        }
        Ok(vx.shape()[0])
    }

    /// Mean over the batch of `-Σ_k y_k ln(clamp(p_k, 1e-12, 1))`.
    pub fn cross_entropy(&mut self, probs: Var, labels: Tensor<T>) -> Result<Var, AutodiffError> {
        let batch = self.check_labels("cross_entropy", probs, &labels)?;
        let eps = T::from_f64_lossy(PROB_CLAMP);
        let total: T = self
            .value(probs)
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&p, &y)| -y * p.max(eps).min(T::one()).ln())
            .sum();
        let loss = total / T::from_usize(batch).unwrap();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, labels }))
    }

    /// Softmax followed by cross-entropy, fused; gradient w.r.t. the logits
    /// is `(p − y)/B`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Tensor<T>) -> Result<Var, AutodiffError> {
        let batch = self.check_labels("softmax_cross_entropy", logits, &labels)?;
        let vz = self.value(logits);
        let k = vz.shape()[1];
        let probs = softmax_rows(vz);
        let mut total = T::zero();
        for (row, y) in vz.data().chunks(k).zip(labels.data().chunks(k)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            for (&z, &yk) in row.iter().zip(y) {
                total += yk * (lse - z);
            }
        }
        let loss = total / T::from_usize(batch).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, labels, probs },
        ))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::ShapeMismatch { op: "concat", left: base, right: vec![axis] });
        }
        let mut total_axis = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total_axis;
        let (outer, _, inner) = split_dims(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let val = self.value(v);
                let chunk = val.shape()[axis] * inner;
                data.extend_from_slice(&val.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let shape = self.value(input).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                left: shape,
                right: vec![axis, start, len],
            });
        }
        let (outer, axis_len, inner) = split_dims(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Slice { input, axis, start }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(input)))
    }

    /// Inverted dropout. Identity (no node recorded) when not training or
    /// when `rate` is zero.
    pub fn dropout(&mut self, input: Var, rate: f64, training: bool, seed: u64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::BadRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let val = self.value(input);
        let mask: Vec<T> = (0..val.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = val.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(val.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { input, mask }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel().max(1)).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Gradients accumulate at fan-out. Every trainable leaf gets an entry,
    /// zero-filled when the loss does not depend on it; constant leaves get
    /// an entry only when reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        let mut by_leaf = BTreeMap::new();
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if let Op::Leaf { .. } = node.op {
                if let Some(g) = grads[id].take() {
                    by_leaf.insert(Var(id), g);
                }
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                by_leaf
                    .entry(Var(id))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let ga = self.grad_slot(grads, *a);
                gemm(m, n, k, gd, false, vb.data(), true, T::one(), ga.data_mut());
                let gb = self.grad_slot(grads, *b);
                gemm(k, m, n, va.data(), true, gd, false, T::one(), gb.data_mut());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.iter().copied());
                self.accumulate(grads, *b, gd.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.iter().copied());
                self.accumulate(grads, *b, gd.iter().map(|&x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, gd.iter().zip(vb).map(|(&g, &bv)| g * bv));
                self.accumulate(grads, *b, gd.iter().zip(va).map(|(&g, &av)| g * av));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, gd.iter().map(|&x| x * *s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, gd.iter().copied()),
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, gd.iter().copied());
                let f = self.value(*b).numel();
                let gb = self.grad_slot(grads, *b);
                for row in gd.chunks(f) {
                    for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            Op::Sigmoid(a) => self.accumulate(
                grads,
                *a,
                gd.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)),
            ),
            Op::Tanh(a) => self.accumulate(
                grads,
                *a,
                gd.iter().zip(y).map(|(&g, &t)| g * (T::one() - t * t)),
            ),
            Op::Relu(a) => self.accumulate(
                grads,
                *a,
                gd.iter()
                    .zip(y)
                    .map(|(&g, &r)| if r > T::zero() { g } else { T::zero() }),
            ),
            Op::Softmax(a) => {
                let k = *node.value.shape().last().unwrap();
                let mut da = Vec::with_capacity(y.len());
                for (grow, prow) in gd.chunks(k).zip(y.chunks(k)) {
                    let dot: T = grow.iter().zip(prow).map(|(&g, &p)| g * p).sum();
                    da.extend(grow.iter().zip(prow).map(|(&g, &p)| p * (g - dot)));
                }
                self.accumulate(grads, *a, da.into_iter());
            }
            Op::CrossEntropy { probs, labels } => {
                let vp = self.value(*probs);
                let batch = T::from_usize(vp.shape()[0]).unwrap();
                let eps = T::from_f64_lossy(PROB_CLAMP);
                let scale = gd[0] / batch;
                self.accumulate(
                    grads,
                    *probs,
                    vp.data().iter().zip(labels.data()).map(|(&p, &yk)| {
                        if p > eps && p <= T::one() {
                            -scale * yk / p
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let batch = T::from_usize(probs.shape()[0]).unwrap();
                let scale = gd[0] / batch;
                self.accumulate(
                    grads,
                    *logits,
                    probs
                        .data()
                        .iter()
                        .zip(labels.data())
                        .map(|(&p, &yk)| scale * (p - yk)),
                );
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_dims(node.value.shape(), *axis);
                let mut offset = 0;
                for o in 0..outer {
                    for &v in inputs {
                        let chunk = self.value(v).shape()[*axis] * inner;
                        let slot = self.grad_slot(grads, v);
                        let dst = &mut slot.data_mut()[o * chunk..(o + 1) * chunk];
                        for (d, &s) in dst.iter_mut().zip(&gd[offset..offset + chunk]) {
                            *d += s;
                        }
                        offset += chunk;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let len = node.value.shape()[*axis];
                let (outer, axis_len, inner) = split_dims(self.value(*input).shape(), *axis);
                let slot = self.grad_slot(grads, *input);
                let dst = slot.data_mut();
                for o in 0..outer {
                    let base = (o * axis_len + start) * inner;
                    let src = &gd[o * len * inner..(o + 1) * len * inner];
                    for (d, &s) in dst[base..base + len * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, gd.iter().copied()),
            Op::Dropout { input, mask } => {
                self.accumulate(grads, *input, gd.iter().zip(mask).map(|(&g, &m)| g * m))
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, std::iter::repeat_n(gd[0], n));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let share = gd[0] / T::from_usize(n.max(1)).unwrap();
                self.accumulate(grads, *a, std::iter::repeat_n(share, n));
            }
        }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, contrib: impl Iterator<Item = T>) {
        let slot = self.grad_slot(grads, v);
        for (acc, c) in slot.data_mut().iter_mut().zip(contrib) {
            *acc += c;
        }
    }
}
