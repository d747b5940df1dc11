//! Dense tensors with a dynamically built reverse-mode differentiation tape.
//!
//! Every operation that participates in training creates a new tensor whose
//! node records its inputs and whatever intermediate values the backward rule
//! needs. Calling [`Tensor::backward`] on a scalar loss walks the recorded
//! graph once in reverse creation order and assigns `∂loss/∂t` to every
//! tensor that asked for a gradient. The tape is rebuilt on every forward
//! pass; nothing is cached between steps.
//!
//! Tensors are rank 1 to 3 (batch × channel × length at most), row-major.
//! A tensor is immutable after creation except for its gradient buffer and —
//! for leaf parameters between steps — the optimizer's in-place update.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::Real;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// How the right operand of an elementwise op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// rhs is a single element applied everywhere.
    Scalar,
    /// rhs shape is a suffix of lhs shape (bias over leading batch dims).
    Suffix,
}

pub(crate) fn broadcast_of(lhs: &[usize], rhs: &[usize]) -> Option<Broadcast> {
    if lhs == rhs {
        Some(Broadcast::Same)
    } else if rhs == [1] {
        Some(Broadcast::Scalar)
    } else if rhs.len() < lhs.len() && lhs.ends_with(rhs) {
        Some(Broadcast::Suffix)
    } else {
        None
    }
}

/// Recorded operation: inputs plus saved values for the backward rule.
pub(crate) enum Op {
    Add { lhs: Tensor, rhs: Tensor, bc: Broadcast },
    Mul { lhs: Tensor, rhs: Tensor },
    Scale { x: Tensor, factor: Real },
    Exp { x: Tensor },
    Ln { x: Tensor },
    Gelu { x: Tensor },
    Reshape { x: Tensor },
    SumAll { x: Tensor },
    SumLast { x: Tensor, lane: usize },
    Gather { x: Tensor, index: Vec<usize> },
    Linear { x: Tensor, weight: Tensor, bias: Tensor },
    Conv1d { x: Tensor, weight: Tensor, bias: Tensor, stride: usize, padding: usize, depthwise: bool },
    MaxPool1d { x: Tensor, argmax: Vec<usize> },
    Softmax { x: Tensor, axis: usize },
    BatchNorm { x: Tensor, scale: Tensor, shift: Tensor, normalized: Vec<Real>, inv_std: Vec<Real>, train: bool },
    Rdft { x: Tensor },
    Irdft { packed: Tensor, original_len: usize },
    ComplexMul { lhs: Tensor, rhs: Tensor },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add { lhs, rhs, .. } | Op::Mul { lhs, rhs } | Op::ComplexMul { lhs, rhs } => {
                vec![lhs, rhs]
            }
            Op::Scale { x, .. }
            | Op::Exp { x }
            | Op::Ln { x }
            | Op::Gelu { x }
            | Op::Reshape { x }
            | Op::SumAll { x }
            | Op::SumLast { x, .. }
            | Op::Gather { x, .. }
            | Op::MaxPool1d { x, .. }
            | Op::Softmax { x, .. }
            | Op::Rdft { x } => vec![x],
            Op::Irdft { packed, .. } => vec![packed],
            Op::Linear { x, weight, bias } => vec![x, weight, bias],
            Op::Conv1d { x, weight, bias, .. } => vec![x, weight, bias],
            Op::BatchNorm { x, scale, shift, .. } => vec![x, scale, shift],
        }
    }
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<Real>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Real>>>,
    op: Option<Op>,
}

/// A reference-counted handle to one tape node. Cloning is cheap and clones
/// share data and gradient storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("leaf", &self.inner.op.is_none())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::dim(format!(
            "rank must be 1..=3, got shape {shape:?}"
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::dim(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<Real>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<Real>, op: Op) -> Tensor {
        Tensor::build(shape, data, false, Some(op))
    }

    /// Constant leaf tensor (no gradient tracking).
    pub fn from_vec(data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::dim(format!(
                "data length {} does not fill shape {shape:?} ({want} elements)",
                data.len()
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn param(data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::dim(format!(
                "data length {} does not fill shape {shape:?} ({want} elements)",
                data.len()
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::from_vec(vec![0.0; n], shape)
    }

    pub fn ones(shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::from_vec(vec![1.0; n], shape)
    }

    pub fn scalar(v: Real) -> Tensor {
        Tensor::build(vec![1], vec![v], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn data(&self) -> Ref<'_, Vec<Real>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<Real> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<Real> {
        let d = self.inner.data.borrow();
        if d.len() != 1 {
            return Err(Error::contract(format!(
                "item() needs exactly one element, tensor has shape {:?}",
                self.inner.shape
            )));
        }
        Ok(d[0])
    }

    /// Detached copy: same values, fresh constant leaf, no history.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Gradient assigned by the last [`Tensor::backward`] call, or zeros if
    /// this tensor was unused by (or unreachable from) the loss.
    pub fn grad(&self) -> Vec<Real> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.len()])
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place update of a leaf's values (the optimizer step). Interior
    /// tape nodes are immutable.
    pub fn apply_update(&self, f: impl FnOnce(&mut [Real])) -> Result<()> {
        if self.inner.op.is_some() {
            return Err(Error::contract(
                "apply_update is only valid on leaf tensors",
            ));
        }
        f(&mut self.inner.data.borrow_mut());
        Ok(())
    }

    // ── elementwise and reduction operations ────────────────────────────

    /// Elementwise sum. `rhs` may equal `lhs` in shape, be a single scalar,
    /// or match a suffix of `lhs`'s shape (a bias applied across leading
    /// batch dimensions).
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let bc = broadcast_of(self.shape(), rhs.shape()).ok_or_else(|| {
            Error::dim(format!(
                "cannot add shapes {:?} and {:?}",
                self.shape(),
                rhs.shape()
            ))
        })?;
        let a = self.data();
        let b = rhs.data();
        let out: Vec<Real> = match bc {
            Broadcast::Same => a.iter().zip(b.iter()).map(|(x, y)| x + y).collect(),
            Broadcast::Scalar => a.iter().map(|x| x + b[0]).collect(),
            Broadcast::Suffix => {
                let m = b.len();
                a.iter().enumerate().map(|(i, x)| x + b[i % m]).collect()
            }
        };
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Add { lhs: self.clone(), rhs: rhs.clone(), bc },
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.add(&rhs.scale(-1.0))
    }

    /// Hadamard (elementwise) product; shapes must match exactly.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(format!(
                "cannot multiply shapes {:?} and {:?} elementwise",
                self.shape(),
                rhs.shape()
            )));
        }
        let out: Vec<Real> = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Mul { lhs: self.clone(), rhs: rhs.clone() },
        ))
    }

    pub fn scale(&self, factor: Real) -> Tensor {
        let out: Vec<Real> = self.data().iter().map(|x| x * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Scale { x: self.clone(), factor },
        )
    }

    pub fn exp(&self) -> Tensor {
        let out: Vec<Real> = self.data().iter().map(|x| x.exp()).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Exp { x: self.clone() })
    }

    /// Natural logarithm; every element must be strictly positive.
    pub fn ln(&self) -> Result<Tensor> {
        {
            let d = self.data();
            if let Some(bad) = d.iter().find(|v| **v <= 0.0) {
                return Err(Error::numeric(format!(
                    "ln of non-positive value {bad}"
                )));
            }
        }
        let out: Vec<Real> = self.data().iter().map(|x| x.ln()).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Ln { x: self.clone() },
        ))
    }

    /// Exact GELU: `x·Φ(x)` with Φ the standard normal CDF via erf.
    pub fn gelu(&self) -> Tensor {
        let out: Vec<Real> = self.data().iter().map(|&x| gelu_value(x)).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Gelu { x: self.clone() })
    }

    /// Sum of all elements, as a `[1]`-shaped tensor.
    pub fn sum(&self) -> Tensor {
        let s: Real = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![s], Op::SumAll { x: self.clone() })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as Real;
        self.sum().scale(1.0 / n)
    }

    /// Sum over the last axis: `[.., L] → [..]` (rank 1 collapses to `[1]`).
    pub fn sum_last_axis(&self) -> Tensor {
        let lane = *self.shape().last().expect("rank >= 1");
        let out_shape: Vec<usize> = if self.rank() == 1 {
            vec![1]
        } else {
            self.shape()[..self.rank() - 1].to_vec()
        };
        let d = self.data();
        let out: Vec<Real> = d.chunks_exact(lane).map(|c| c.iter().sum()).collect();
        drop(d);
        Tensor::from_op(out_shape, out, Op::SumLast { x: self.clone(), lane })
    }

    /// Maximum over the last axis, returned as a constant (no gradient
    /// flows through it). Used for numerically stable exponentials.
    pub fn max_last_axis_detached(&self) -> Tensor {
        let lane = *self.shape().last().expect("rank >= 1");
        let out_shape: Vec<usize> = if self.rank() == 1 {
            vec![1]
        } else {
            self.shape()[..self.rank() - 1].to_vec()
        };
        let d = self.data();
        let out: Vec<Real> = d
            .chunks_exact(lane)
            .map(|c| c.iter().cloned().fold(Real::NEG_INFINITY, Real::max))
            .collect();
        drop(d);
        Tensor::build(out_shape, out, false, None)
    }

    /// Copy into a new shape with the same number of elements.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        let want: usize = shape.iter().product();
        if want != self.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} ({} elements) into {shape:?} ({want} elements)",
                self.shape(),
                self.len()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape { x: self.clone() },
        ))
    }

    /// Pick one element per row of a `[rows, cols]` tensor: `out[r] =
    /// self[r, index[r]]`.
    pub fn gather_last(&self, index: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::contract(format!(
                "gather_last needs a rank-2 tensor, got {:?}",
                self.shape()
            )));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        if index.len() != rows {
            return Err(Error::dim(format!(
                "gather index length {} != row count {rows}",
                index.len()
            )));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= cols) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for {cols} columns"
            )));
        }
        let d = self.data();
        let out: Vec<Real> = index.iter().enumerate().map(|(r, &c)| d[r * cols + c]).collect();
        drop(d);
        Ok(Tensor::from_op(
            vec![rows],
            out,
            Op::Gather { x: self.clone(), index: index.to_vec() },
        ))
    }

    /// Row index of the maximum within each row of a `[rows, cols]` tensor
    /// (first index wins ties). Plain data access, not a tape operation.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return Err(Error::contract(format!(
                "argmax_rows needs a rank-2 tensor, got {:?}",
                self.shape()
            )));
        }
        let cols = self.shape()[1];
        let d = self.data();
        Ok(d.chunks_exact(cols)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    // ── reverse pass ─────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Assigns `∂loss/∂t` to every
    /// gradient-tracking tensor reachable from `self`; gradients from
    /// multiple uses of the same tensor accumulate additively. Each call
    /// overwrites gradients from previous calls.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Reachable subgraph, then reverse creation order: inputs always
        // exist before the node that consumes them, so descending id is a
        // valid reverse-topological order.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<Tensor> = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.inner.op {
                for p in op.parents() {
                    if !seen.contains(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut store = GradStore::default();
        store.slots.insert(self.id(), vec![1.0]);

        for node in &nodes {
            let Some(g) = store.slots.remove(&node.id()) else {
                continue;
            };
            if node.inner.requires_grad {
                *node.inner.grad.borrow_mut() = Some(g.clone());
            }
            if let Some(op) = &node.inner.op {
                backward_rule(op, node, &g, &mut store)?;
            }
        }
        Ok(())
    }

    /// Finite-difference probe of `∂f/∂self[index]` without the tape:
    /// perturbs the value in place, re-evaluates `f`, and restores it.
    pub fn numeric_grad_at(
        &self,
        index: usize,
        h: Real,
        mut f: impl FnMut() -> Result<Tensor>,
    ) -> Result<Real> {
        if index >= self.len() {
            return Err(Error::contract(format!(
                "probe index {index} out of range for {} elements",
                self.len()
            )));
        }
        let original = self.inner.data.borrow()[index];
        self.inner.data.borrow_mut()[index] = original + h;
        let plus = f()?.item()?;
        self.inner.data.borrow_mut()[index] = original - h;
        let minus = f()?.item()?;
        self.inner.data.borrow_mut()[index] = original;
        let num = (plus - minus) / (2.0 * h);
        if !num.is_finite() {
            return Err(Error::numeric(format!(
                "finite difference at index {index} is not finite"
            )));
        }
        Ok(num)
    }
}

pub(crate) fn gelu_value(x: Real) -> Real {
    let sqrt2 = (2.0 as Real).sqrt();
    0.5 * x * (1.0 + crate::erf(x / sqrt2))
}

pub(crate) fn gelu_derivative(x: Real) -> Real {
    let sqrt2 = (2.0 as Real).sqrt();
    let two_pi = 2.0 * std::f64::consts::PI as Real;
    let phi_cdf = 0.5 * (1.0 + crate::erf(x / sqrt2));
    let phi_pdf = (-0.5 * x * x).exp() / two_pi.sqrt();
    phi_cdf + x * phi_pdf
}

#[derive(Default)]
pub(crate) struct GradStore {
    slots: HashMap<u64, Vec<Real>>,
}

impl GradStore {
    /// Runs `f` on the gradient slot for `t`, creating it zero-filled on
    /// first use. Skips tensors that neither track gradients nor lead to
    /// any that do.
    pub(crate) fn with_slot(&mut self, t: &Tensor, f: impl FnOnce(&mut [Real])) {
        if t.inner.op.is_none() && !t.inner.requires_grad {
            return;
        }
        let slot = self
            .slots
            .entry(t.id())
            .or_insert_with(|| vec![0.0; t.len()]);
        f(slot);
    }
}

fn backward_rule(op: &Op, out: &Tensor, g: &[Real], store: &mut GradStore) -> Result<()> {
    match op {
        Op::Add { lhs, rhs, bc } => {
            store.with_slot(lhs, |gl| {
                for (gi, go) in gl.iter_mut().zip(g) {
                    *gi += *go;
                }
            });
            store.with_slot(rhs, |gr| match bc {
                Broadcast::Same => {
                    for (gi, go) in gr.iter_mut().zip(g) {
                        *gi += *go;
                    }
                }
                Broadcast::Scalar => gr[0] += g.iter().sum::<Real>(),
                Broadcast::Suffix => {
                    let m = gr.len();
                    for (i, go) in g.iter().enumerate() {
                        gr[i % m] += *go;
                    }
                }
            });
        }
        Op::Mul { lhs, rhs } => {
            {
                let b = rhs.data();
                store.with_slot(lhs, |gl| {
                    for i in 0..gl.len() {
                        gl[i] += g[i] * b[i];
                    }
                });
            }
            let a = lhs.data();
            store.with_slot(rhs, |gr| {
                for i in 0..gr.len() {
                    gr[i] += g[i] * a[i];
                }
            });
        }
        Op::Scale { x, factor } => {
            store.with_slot(x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * factor;
                }
            });
        }
        Op::Exp { x } => {
            let o = out.data();
            store.with_slot(x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * o[i];
                }
            });
        }
        Op::Ln { x } => {
            let xs = x.data();
            store.with_slot(x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] / xs[i];
                }
            });
        }
        Op::Gelu { x } => {
            let xs = x.data();
            store.with_slot(x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * gelu_derivative(xs[i]);
                }
            });
        }
        Op::Reshape { x } => {
            store.with_slot(x, |gx| {
                for (gi, go) in gx.iter_mut().zip(g) {
                    *gi += *go;
                }
            });
        }
        Op::SumAll { x } => {
            store.with_slot(x, |gx| {
                for gi in gx.iter_mut() {
                    *gi += g[0];
                }
            });
        }
        Op::SumLast { x, lane } => {
            store.with_slot(x, |gx| {
                for (i, gi) in gx.iter_mut().enumerate() {
                    *gi += g[i / lane];
                }
            });
        }
        Op::Gather { x, index } => {
            let cols = x.shape()[1];
            store.with_slot(x, |gx| {
                for (r, &c) in index.iter().enumerate() {
                    gx[r * cols + c] += g[r];
                }
            });
        }
        Op::Linear { x, weight, bias } => {
            crate::nn::linear_backward(x, weight, bias, g, store);
        }
        Op::Conv1d { x, weight, bias, stride, padding, depthwise } => {
            crate::nn::conv1d_backward(
                x, weight, bias, *stride, *padding, *depthwise, out, g, store,
            );
        }
        Op::MaxPool1d { x, argmax } => {
            store.with_slot(x, |gx| {
                for (i, &src) in argmax.iter().enumerate() {
                    gx[src] += g[i];
                }
            });
        }
        Op::Softmax { x, axis } => {
            crate::nn::softmax_backward(x, *axis, out, g, store);
        }
        Op::BatchNorm { x, scale, shift, normalized, inv_std, train } => {
            crate::nn::batchnorm_backward(x, scale, shift, normalized, inv_std, *train, g, store);
        }
        Op::Rdft { x } => {
            crate::spectral::rdft_backward(x, g, store);
        }
        Op::Irdft { packed, original_len } => {
            crate::spectral::irdft_backward(packed, *original_len, g, store);
        }
        Op::ComplexMul { lhs, rhs } => {
            crate::spectral::complex_mul_backward(lhs, rhs, g, store);
        }
    }
    Ok(())
}

// ── gradient checking ────────────────────────────────────────────────────

/// One probed element in a gradient check.
#[derive(Clone, Debug)]
pub struct GradProbe {
    pub parameter: String,
    pub index: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_err: Real,
    pub abs_err: Real,
}

/// Outcome of comparing reverse-mode gradients against central finite
/// differences.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub probes: Vec<GradProbe>,
    pub max_rel_err: Real,
    pub max_abs_err: Real,
    pub tolerance: Real,
    pub passed: bool,
}

impl GradReport {
    fn from_probes(probes: Vec<GradProbe>, tol: Real) -> GradReport {
        let max_rel_err = probes.iter().map(|p| p.rel_err).fold(0.0, Real::max);
        let max_abs_err = probes.iter().map(|p| p.abs_err).fold(0.0, Real::max);
        // An element passes on relative error, with an absolute-error
        // fallback where the true gradient is indistinguishable from zero.
        let passed = probes
            .iter()
            .all(|p| p.rel_err < tol || p.abs_err < 1e-8);
        GradReport { probes, max_rel_err, max_abs_err, tolerance: tol, passed }
    }

    pub fn worst(&self) -> Option<&GradProbe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
    }
}

fn probe_errors(name: &str, index: usize, analytic: Real, numeric: Real) -> GradProbe {
    let abs_err = (analytic - numeric).abs();
    let denom = analytic.abs().max(numeric.abs());
    let rel_err = if denom > 0.0 { abs_err / denom } else { 0.0 };
    GradProbe {
        parameter: name.to_string(),
        index,
        analytic,
        numeric,
        rel_err,
        abs_err,
    }
}

/// Checks reverse-mode gradients of `f` with respect to `x` against central
/// finite differences `(f(x+h) − f(x−h)) / 2h`, element by element.
///
/// `f` must be deterministic: it is re-evaluated many times with perturbed
/// copies of `x`'s data. Passes iff every element's relative error is below
/// `tol`, falling back to absolute error `< 1e-8` near zero.
pub fn gradcheck(
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    h: Real,
    tol: Real,
) -> Result<GradReport> {
    let probe = Tensor::param(x.to_vec(), x.shape())?;
    let loss = f(&probe)?;
    if !loss.item()?.is_finite() {
        return Err(Error::numeric("gradcheck loss is not finite"));
    }
    loss.backward()?;
    let analytic = probe.grad();

    let mut probes = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let numeric = probe.numeric_grad_at(i, h, || f(&probe))?;
        probes.push(probe_errors("x", i, analytic[i], numeric));
    }
    Ok(GradReport::from_probes(probes, tol))
}

/// Multi-parameter gradient check. Re-evaluates `loss_fn` (which must read
/// the listed parameter tensors) under perturbation of up to
/// `probes_per_param` elements of each parameter; probes every element when
/// `None`.
pub fn gradcheck_named(
    mut loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[(String, Tensor)],
    h: Real,
    tol: Real,
    probes_per_param: Option<usize>,
    rng: &mut impl rand::Rng,
) -> Result<GradReport> {
    let loss = loss_fn()?;
    if !loss.item()?.is_finite() {
        return Err(Error::numeric("gradcheck loss is not finite"));
    }
    loss.backward()?;
    let analytic: Vec<Vec<Real>> = params.iter().map(|(_, p)| p.grad()).collect();

    let mut probes = Vec::new();
    for ((name, p), a) in params.iter().zip(&analytic) {
        let n = p.len();
        let indices: Vec<usize> = match probes_per_param {
            Some(k) if k < n => {
                let mut picked: Vec<usize> = Vec::with_capacity(k);
                while picked.len() < k {
                    let i = rng.gen_range(0..n);
                    if !picked.contains(&i) {
                        picked.push(i);
                    }
                }
                picked
            }
            _ => (0..n).collect(),
        };
        for i in indices {
            let numeric = p.numeric_grad_at(i, h, &mut loss_fn)?;
            probes.push(probe_errors(name, i, a[i], numeric));
        }
    }
    Ok(GradReport::from_probes(probes, tol))
}
