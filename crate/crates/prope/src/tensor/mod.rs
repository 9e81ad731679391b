//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The graph is recorded dynamically: every op that depends on a parameter
//! stores a boxed [`BackwardOp`] holding `Tensor` handles to its parents.
//! Calling [`Tensor::backward`] on a scalar walks the graph in reverse
//! topological order and accumulates gradients into the leaves.
//!
//! Tensors are immutable after construction; gradients are the only interior
//! mutability. Handles are `Rc`-based and a forward/backward pass is
//! single-threaded by design — parallelism happens across independent passes.

pub mod adam;
pub mod rng;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use adam::Adam;
pub use rng::Rng;

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

/// Reverse rule for one recorded operation.
pub trait BackwardOp {
    /// Parents whose gradients this op contributes to, in a fixed order.
    fn parents(&self) -> Vec<Tensor>;
    /// Accumulate parent gradients given the gradient of the output.
    fn backward(&self, grad_out: &[f64], out: &Tensor);
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<Box<dyn BackwardOp>>,
}

/// Dense row-major f64 tensor, cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Box<dyn BackwardOp>>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                grad: RefCell::new(None),
                requires_grad,
                op: if requires_grad { op } else { None },
            }),
        }
    }

    /// Constant tensor: no gradient is ever tracked through it.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("constant", shape, &[data.len()]));
        }
        Ok(Tensor::new(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during backward passes.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("param", shape, &[data.len()]));
        }
        Ok(Tensor::new(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(vec![1], vec![value], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Take the accumulated gradient, leaving none behind.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accum_grad(&self, g: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Box<dyn BackwardOp>) -> Tensor {
        let requires = op.parents().iter().any(|p| p.inner.requires_grad);
        Tensor::new(shape, data, requires, Some(op))
    }

    /// Build a tensor from a module-defined custom operation.
    ///
    /// The op's forward result is `data`; its `BackwardOp` impl defines the
    /// reverse rule. Used by ops that live outside this module (e.g. the
    /// block-diagonal transform application).
    pub fn from_custom_op(shape: &[usize], data: Vec<f64>, op: Box<dyn BackwardOp>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("from_custom_op", shape, &[data.len()]));
        }
        Ok(Tensor::from_op(shape.to_vec(), data, op))
    }

    /// Reverse pass from a scalar output. Gradients accumulate into every
    /// reachable leaf with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Numeric(format!(
                "backward requires a scalar output, got shape {:?}",
                self.shape()
            )));
        }
        if !self.item().is_finite() {
            return Err(Error::Numeric("backward on non-finite scalar".into()));
        }
        // Iterative DFS post-order: children before parents in `order`.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.inner.id) {
                continue;
            }
            let parents = node.inner.op.as_ref().map(|op| op.parents()).unwrap_or_default();
            stack.push((node, true));
            for p in parents {
                if !visited.contains(&p.inner.id) && p.inner.requires_grad {
                    stack.push((p, false));
                }
            }
        }
        self.accum_grad(&[1.0]);
        for node in order.iter().rev() {
            if let Some(op) = node.inner.op.as_ref() {
                // Consume the interior gradient; leaves keep theirs.
                let g = node.inner.grad.borrow_mut().take();
                if let Some(g) = g {
                    op.backward(&g, node);
                }
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = zip_map(self.data(), other.data(), |a, b| a + b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(AddOp {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = zip_map(self.data(), other.data(), |a, b| a - b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(SubOp {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        let data = zip_map(self.data(), other.data(), |a, b| a * b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(MulOp {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x * c).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(ScaleOp { a: self.clone(), c }),
        ))
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(ReluOp { a: self.clone() }),
        ))
    }

    /// Smooth GELU (tanh approximation).
    pub fn gelu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| gelu_fwd(x)).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(GeluOp { a: self.clone() }),
        ))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(SigmoidOp { a: self.clone() }),
        ))
    }

    // ── broadcast over rows of a [t, d] tensor ──────────────────────

    /// `[t, d] + [d]` row-wise bias add.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (t, d) = self.dims2("add_row")?;
        if bias.numel() != d {
            return Err(Error::dim("add_row", self.shape(), bias.shape()));
        }
        let mut data = self.data().to_vec();
        for row in 0..t {
            for (x, b) in data[row * d..(row + 1) * d].iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        Ok(Tensor::from_op(
            vec![t, d],
            data,
            Box::new(AddRowOp {
                a: self.clone(),
                bias: bias.clone(),
            }),
        ))
    }

    /// `[t, d] * [d]` row-wise gain.
    pub fn mul_row(&self, gain: &Tensor) -> Result<Tensor> {
        let (t, d) = self.dims2("mul_row")?;
        if gain.numel() != d {
            return Err(Error::dim("mul_row", self.shape(), gain.shape()));
        }
        let mut data = self.data().to_vec();
        for row in 0..t {
            for (x, w) in data[row * d..(row + 1) * d].iter_mut().zip(gain.data()) {
                *x *= w;
            }
        }
        Ok(Tensor::from_op(
            vec![t, d],
            data,
            Box::new(MulRowOp {
                a: self.clone(),
                gain: gain.clone(),
            }),
        ))
    }

    /// Repeat a `[d]` vector as every row of a `[t, d]` tensor.
    pub fn broadcast_rows(&self, t: usize) -> Result<Tensor> {
        let d = self.numel();
        if self.shape().len() > 1 && self.shape().iter().filter(|&&e| e > 1).count() > 1 {
            return Err(Error::dim("broadcast_rows", self.shape(), &[d]));
        }
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            data.extend_from_slice(self.data());
        }
        Ok(Tensor::from_op(
            vec![t, d],
            data,
            Box::new(BroadcastRowsOp { a: self.clone(), t }),
        ))
    }

    // ── matrix products ─────────────────────────────────────────────

    /// `[m, k] x [k, n]` matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(), other.shape()));
        }
        let data = mm_nn(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            Box::new(MatMulOp {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    /// `[m, k] x [n, k]^T` product; the second operand is transposed.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.shape(), other.shape()));
        }
        let data = mm_nt(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            Box::new(MatMulNtOp {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose2d")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data()[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            vec![c, r],
            data,
            Box::new(TransposeOp { a: self.clone() }),
        ))
    }

    // ── normalization and reductions ────────────────────────────────

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape().len() {
            return Err(Error::dim("softmax", self.shape(), &[axis]));
        }
        if let Some(bad) = self.data().iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("softmax on non-finite input {bad}")));
        }
        let mut data = self.data().to_vec();
        for_each_lane(self.shape(), axis, |idx| {
            let max = idx.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &i in idx {
                data[i] = (data[i] - max).exp();
                sum += data[i];
            }
            for &i in idx {
                data[i] /= sum;
            }
        });
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(SoftmaxOp { a: self.clone(), axis }),
        ))
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape().len() {
            return Err(Error::dim("log_softmax", self.shape(), &[axis]));
        }
        let mut data = self.data().to_vec();
        for_each_lane(self.shape(), axis, |idx| {
            let max = idx.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let lse = idx.iter().map(|&i| (data[i] - max).exp()).sum::<f64>().ln() + max;
            for &i in idx {
                data[i] -= lse;
            }
        });
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(LogSoftmaxOp { a: self.clone(), axis }),
        ))
    }

    /// Row-wise layer normalization over the last axis, without affine terms.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let (t, d) = match self.shape() {
            [d] => (1, *d),
            [t, d] => (*t, *d),
            s => return Err(Error::dim("layer_norm", s, &[0, 0])),
        };
        let mut data = self.data().to_vec();
        let mut inv_sigma = vec![0.0; t];
        for row in 0..t {
            let x = &mut data[row * d..(row + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[row] = inv;
            for v in x.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Box::new(LayerNormOp {
                a: self.clone(),
                inv_sigma,
                d,
            }),
        ))
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Ok(Tensor::from_op(
            vec![1],
            vec![s],
            Box::new(SumOp {
                a: self.clone(),
                scale: 1.0,
            }),
        ))
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        let s = self.data().iter().sum::<f64>() / n;
        Ok(Tensor::from_op(
            vec![1],
            vec![s],
            Box::new(SumOp {
                a: self.clone(),
                scale: 1.0 / n,
            }),
        ))
    }

    // ── shape ops ───────────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Box::new(ReshapeOp { a: self.clone() }),
        ))
    }

    /// Slice `[start, end)` along `axis` of a 1-D or 2-D tensor.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::dim("slice", &shape, &[axis, start, end]));
        }
        let (out_shape, data) = match shape.as_slice() {
            [_] => (vec![end - start], self.data()[start..end].to_vec()),
            [r, c] => {
                if axis == 0 {
                    (vec![end - start, *c], self.data()[start * c..end * c].to_vec())
                } else {
                    let mut data = Vec::with_capacity(r * (end - start));
                    for row in 0..*r {
                        data.extend_from_slice(&self.data()[row * c + start..row * c + end]);
                    }
                    (vec![*r, end - start], data)
                }
            }
            s => return Err(Error::dim("slice", s, &[axis])),
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            Box::new(SliceOp {
                a: self.clone(),
                axis,
                start,
            }),
        ))
    }

    /// Concatenate 1-D or 2-D tensors along `axis`.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Numeric("concat of zero tensors".into()));
        }
        let ndim = parts[0].shape().len();
        if axis >= ndim {
            return Err(Error::dim("concat", parts[0].shape(), &[axis]));
        }
        for p in parts.iter().skip(1) {
            if p.shape().len() != ndim {
                return Err(Error::dim("concat", parts[0].shape(), p.shape()));
            }
            for a in 0..ndim {
                if a != axis && p.shape()[a] != parts[0].shape()[a] {
                    return Err(Error::dim("concat", parts[0].shape(), p.shape()));
                }
            }
        }
        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let data = match (ndim, axis) {
            (1, 0) | (2, 0) => {
                let mut data = Vec::with_capacity(out_shape.iter().product());
                for p in parts {
                    data.extend_from_slice(p.data());
                }
                data
            }
            (2, 1) => {
                let rows = out_shape[0];
                let total_c = out_shape[1];
                let mut data = Vec::with_capacity(rows * total_c);
                for row in 0..rows {
                    for p in parts {
                        let c = p.shape()[1];
                        data.extend_from_slice(&p.data()[row * c..(row + 1) * c]);
                    }
                }
                data
            }
            _ => return Err(Error::dim("concat", parts[0].shape(), &[axis])),
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            Box::new(ConcatOp {
                parts: parts.to_vec(),
                axis,
            }),
        ))
    }
}

// ── kernels ─────────────────────────────────────────────────────────

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `[m,k] x [k,n]`, ikj order so the inner loop streams contiguous rows.
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let a_il = a[i * k + l];
            if a_il == 0.0 {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_il * bv;
            }
        }
    }
    c
}

/// `[m,k] x [n,k]^T`: row-by-row dot products.
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `[k,m]^T x [k,n]`.
pub(crate) fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for l in 0..k {
        let b_row = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let a_li = a[l * m + i];
            if a_li == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_li * bv;
            }
        }
    }
    c
}

/// Invoke `f` with the flat indices of each lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut idx = vec![0usize; len];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * len * stride + s;
            for (pos, slot) in idx.iter_mut().enumerate() {
                *slot = base + pos * stride;
            }
            f(&idx);
        }
    }
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

// ── op structs ──────────────────────────────────────────────────────

struct AddOp {
    a: Tensor,
    b: Tensor,
}
impl BackwardOp for AddOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        self.a.accum_grad(g);
        self.b.accum_grad(g);
    }
}

struct SubOp {
    a: Tensor,
    b: Tensor,
}
impl BackwardOp for SubOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        self.a.accum_grad(g);
        if self.b.requires_grad() {
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            self.b.accum_grad(&neg);
        }
    }
}

struct MulOp {
    a: Tensor,
    b: Tensor,
}
impl BackwardOp for MulOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        if self.a.requires_grad() {
            self.a.accum_grad(&zip_map(g, self.b.data(), |x, y| x * y));
        }
        if self.b.requires_grad() {
            self.b.accum_grad(&zip_map(g, self.a.data(), |x, y| x * y));
        }
    }
}

struct ScaleOp {
    a: Tensor,
    c: f64,
}
impl BackwardOp for ScaleOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let da: Vec<f64> = g.iter().map(|x| x * self.c).collect();
        self.a.accum_grad(&da);
    }
}

struct ReluOp {
    a: Tensor,
}
impl BackwardOp for ReluOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let da = zip_map(g, self.a.data(), |gv, x| if x > 0.0 { gv } else { 0.0 });
        self.a.accum_grad(&da);
    }
}

struct GeluOp {
    a: Tensor,
}
impl BackwardOp for GeluOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let da = zip_map(g, self.a.data(), |gv, x| gv * gelu_grad(x));
        self.a.accum_grad(&da);
    }
}

struct SigmoidOp {
    a: Tensor,
}
impl BackwardOp for SigmoidOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        let da = zip_map(g, out.data(), |gv, y| gv * y * (1.0 - y));
        self.a.accum_grad(&da);
    }
}

struct AddRowOp {
    a: Tensor,
    bias: Tensor,
}
impl BackwardOp for AddRowOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.bias.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        self.a.accum_grad(g);
        if self.bias.requires_grad() {
            let d = self.bias.numel();
            let mut db = vec![0.0; d];
            for row in g.chunks_exact(d) {
                for (acc, x) in db.iter_mut().zip(row) {
                    *acc += x;
                }
            }
            self.bias.accum_grad(&db);
        }
    }
}

struct MulRowOp {
    a: Tensor,
    gain: Tensor,
}
impl BackwardOp for MulRowOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.gain.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let d = self.gain.numel();
        if self.a.requires_grad() {
            let w = self.gain.data();
            let da: Vec<f64> = g
                .chunks_exact(d)
                .flat_map(|row| row.iter().zip(w).map(|(gv, wv)| gv * wv).collect::<Vec<_>>())
                .collect();
            self.a.accum_grad(&da);
        }
        if self.gain.requires_grad() {
            let mut dw = vec![0.0; d];
            for (row_g, row_x) in g.chunks_exact(d).zip(self.a.data().chunks_exact(d)) {
                for ((acc, gv), xv) in dw.iter_mut().zip(row_g).zip(row_x) {
                    *acc += gv * xv;
                }
            }
            self.gain.accum_grad(&dw);
        }
    }
}

struct BroadcastRowsOp {
    a: Tensor,
    t: usize,
}
impl BackwardOp for BroadcastRowsOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let d = self.a.numel();
        let mut da = vec![0.0; d];
        for row in 0..self.t {
            for (acc, x) in da.iter_mut().zip(&g[row * d..(row + 1) * d]) {
                *acc += x;
            }
        }
        self.a.accum_grad(&da);
    }
}

struct MatMulOp {
    a: Tensor,
    b: Tensor,
}
impl BackwardOp for MatMulOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let (m, k) = (self.a.shape()[0], self.a.shape()[1]);
        let n = self.b.shape()[1];
        if self.a.requires_grad() {
            // dA = g · B^T
            self.a.accum_grad(&mm_nt(g, self.b.data(), m, n, k));
        }
        if self.b.requires_grad() {
            // dB = A^T · g
            self.b.accum_grad(&mm_tn(self.a.data(), g, m, k, n));
        }
    }
}

struct MatMulNtOp {
    a: Tensor,
    b: Tensor,
}
impl BackwardOp for MatMulNtOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let (m, k) = (self.a.shape()[0], self.a.shape()[1]);
        let n = self.b.shape()[0];
        if self.a.requires_grad() {
            // dA = g · B
            self.a.accum_grad(&mm_nn(g, self.b.data(), m, n, k));
        }
        if self.b.requires_grad() {
            // dB = g^T · A
            self.b.accum_grad(&mm_tn(g, self.a.data(), m, n, k));
        }
    }
}

struct TransposeOp {
    a: Tensor,
}
impl BackwardOp for TransposeOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        let (c, r) = (out.shape()[0], out.shape()[1]);
        let mut da = vec![0.0; r * c];
        for i in 0..c {
            for j in 0..r {
                da[j * c + i] = g[i * r + j];
            }
        }
        self.a.accum_grad(&da);
    }
}

struct SoftmaxOp {
    a: Tensor,
    axis: usize,
}
impl BackwardOp for SoftmaxOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        let y = out.data();
        let mut da = vec![0.0; g.len()];
        for_each_lane(out.shape(), self.axis, |idx| {
            let dot: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
            for &i in idx {
                da[i] = y[i] * (g[i] - dot);
            }
        });
        self.a.accum_grad(&da);
    }
}

struct LogSoftmaxOp {
    a: Tensor,
    axis: usize,
}
impl BackwardOp for LogSoftmaxOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        let y = out.data();
        let mut da = vec![0.0; g.len()];
        for_each_lane(out.shape(), self.axis, |idx| {
            let gsum: f64 = idx.iter().map(|&i| g[i]).sum();
            for &i in idx {
                da[i] = g[i] - y[i].exp() * gsum;
            }
        });
        self.a.accum_grad(&da);
    }
}

struct LayerNormOp {
    a: Tensor,
    inv_sigma: Vec<f64>,
    d: usize,
}
impl BackwardOp for LayerNormOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        let d = self.d;
        let y = out.data();
        let mut da = vec![0.0; g.len()];
        for row in 0..self.inv_sigma.len() {
            let gr = &g[row * d..(row + 1) * d];
            let yr = &y[row * d..(row + 1) * d];
            let g_mean = gr.iter().sum::<f64>() / d as f64;
            let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let inv = self.inv_sigma[row];
            for i in 0..d {
                da[row * d + i] = inv * (gr[i] - g_mean - yr[i] * gy_mean);
            }
        }
        self.a.accum_grad(&da);
    }
}

struct SumOp {
    a: Tensor,
    scale: f64,
}
impl BackwardOp for SumOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        let da = vec![g[0] * self.scale; self.a.numel()];
        self.a.accum_grad(&da);
    }
}

struct ReshapeOp {
    a: Tensor,
}
impl BackwardOp for ReshapeOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], _out: &Tensor) {
        self.a.accum_grad(g);
    }
}

struct SliceOp {
    a: Tensor,
    axis: usize,
    start: usize,
}
impl BackwardOp for SliceOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.a.clone()]
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        let mut da = vec![0.0; self.a.numel()];
        match (self.a.shape(), out.shape()) {
            ([_], [_]) => {
                da[self.start..self.start + g.len()].copy_from_slice(g);
            }
            ([_, c], [or, oc]) => {
                if self.axis == 0 {
                    da[self.start * c..self.start * c + g.len()].copy_from_slice(g);
                } else {
                    for row in 0..*or {
                        da[row * c + self.start..row * c + self.start + oc].copy_from_slice(&g[row * oc..(row + 1) * oc]);
                    }
                }
            }
            _ => unreachable!("slice limited to 1-D/2-D at construction"),
        }
        self.a.accum_grad(&da);
    }
}

struct ConcatOp {
    parts: Vec<Tensor>,
    axis: usize,
}
impl BackwardOp for ConcatOp {
    fn parents(&self) -> Vec<Tensor> {
        self.parts.clone()
    }
    fn backward(&self, g: &[f64], out: &Tensor) {
        match (out.shape().len(), self.axis) {
            (1, 0) | (2, 0) => {
                let mut offset = 0;
                for p in &self.parts {
                    let n = p.numel();
                    if p.requires_grad() {
                        p.accum_grad(&g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            (2, 1) => {
                let rows = out.shape()[0];
                let total_c = out.shape()[1];
                let mut col_offset = 0;
                for p in &self.parts {
                    let c = p.shape()[1];
                    if p.requires_grad() {
                        let mut dp = Vec::with_capacity(rows * c);
                        for row in 0..rows {
                            dp.extend_from_slice(&g[row * total_c + col_offset..row * total_c + col_offset + c]);
                        }
                        p.accum_grad(&dp);
                    }
                    col_offset += c;
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Gradient accumulation entry point for ops defined outside this module.
pub(crate) fn accum_external(t: &Tensor, g: &[f64]) {
    t.accum_grad(g);
}

// ── gradient checking ───────────────────────────────────────────────

/// Compare the backward-pass gradient of a scalar function against central
/// finite differences. Returns the worst componentwise error: relative where
/// the magnitude is above 1e-8, absolute below.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let xp = Tensor::param(x.shape(), x.data().to_vec())?;
    let loss = f(&xp)?;
    if loss.numel() != 1 {
        return Err(Error::Numeric("grad_check requires a scalar-valued function".into()));
    }
    if !loss.item().is_finite() {
        return Err(Error::Numeric("grad_check: non-finite function value".into()));
    }
    loss.backward()?;
    let g_ad = xp.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut worst: f64 = 0.0;
    let mut data = x.data().to_vec();
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + eps;
        let fp = f(&Tensor::constant(x.shape(), data.clone())?)?.item();
        data[i] = orig - eps;
        let fm = f(&Tensor::constant(x.shape(), data.clone())?)?.item();
        data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric("grad_check: non-finite perturbed value".into()));
        }
        let fd = (fp - fm) / (2.0 * eps);
        let diff = (g_ad[i] - fd).abs();
        let denom = g_ad[i].abs().max(fd.abs());
        let err = if denom < 1e-8 { diff } else { diff / denom };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randn_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
        Tensor::constant(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::constant(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::constant(&[2, 1], vec![0.0, 1.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let a = randn_tensor(&[5, 7], &mut rng);
        let b = randn_tensor(&[7, 3], &mut rng);
        let err = grad_check(|x| x.matmul(&b)?.sum(), &a, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
        let err = grad_check(|x| a.matmul(x)?.sum(), &b, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let x = Tensor::constant(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_no_overflow_on_large_inputs() {
        let x = Tensor::constant(&[2], vec![1000.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let x = randn_tensor(&[4, 9], &mut rng);
            let x = x.scale(1e4).unwrap();
            let y = x.softmax(1).unwrap();
            for row in y.data().chunks_exact(9) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "sum = {s}");
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor::constant(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(x.softmax(0), Err(Error::Numeric(_))));
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let x = Tensor::constant(&[1, 4], vec![5.0; 4]).unwrap();
        let y = x.layer_norm(1e-6).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 5]);
        let out = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(out.shape(), &[2, 8]);
    }

    #[test]
    fn mean_relu_gradient_matches_finite_differences() {
        // Inputs bounded away from zero so the kink never bites.
        let x = Tensor::constant(&[6], vec![1.0, -2.0, 0.5, -0.25, 3.0, -1.5]).unwrap();
        let err = grad_check(|x| x.relu()?.mean(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn grad_check_linear_function_is_exact() {
        // Dyadic values and a power-of-two step keep the differences exact.
        let x = Tensor::constant(&[4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let err = grad_check(|x| x.sum(), &x, 0.0009765625).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let x = Tensor::constant(&[2], vec![1.0, 2.0]).unwrap();
        let xp = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = xp.mul(&xp).unwrap().sum().unwrap();
        loss.backward().unwrap();
        let g = xp.grad().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12);
        let err = grad_check(|x| x.mul(x)?.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn every_op_passes_finite_difference_checks() {
        let mut rng = Rng::new(11);
        type Case = (&'static str, fn(&Tensor, &Tensor) -> Result<Tensor>);
        let cases: Vec<Case> = vec![
            ("add", |x, y| x.add(y)?.sum()),
            ("sub", |x, y| x.sub(y)?.sum()),
            ("mul", |x, y| x.mul(y)?.mean()),
            ("scale", |x, _| x.scale(1.7)?.sum()),
            ("gelu", |x, _| x.gelu()?.sum()),
            ("sigmoid", |x, _| x.sigmoid()?.sum()),
            ("softmax", |x, _| x.softmax(1)?.mul(x)?.sum()),
            ("log_softmax", |x, _| x.log_softmax(1)?.mul(x)?.mean()),
            ("layer_norm", |x, _| x.layer_norm(1e-6)?.mul(x)?.sum()),
            ("transpose", |x, _| x.transpose2d()?.mul(&x.transpose2d()?)?.sum()),
            ("reshape", |x, _| x.reshape(&[12])?.mul(&x.reshape(&[12])?)?.sum()),
            ("slice_rows", |x, _| x.slice(0, 1, 3)?.mul(&x.slice(0, 0, 2)?)?.sum()),
            ("slice_cols", |x, _| x.slice(1, 1, 4)?.mul(&x.slice(1, 0, 3)?)?.sum()),
            ("concat", |x, y| {
                Tensor::concat(&[x.clone(), y.clone()], 1)?.mul(&Tensor::concat(&[y.clone(), x.clone()], 1)?)?.sum()
            }),
            ("matmul_nt", |x, y| x.matmul_nt(y)?.sum()),
            ("broadcast", |x, _| x.reshape(&[12])?.slice(0, 0, 4)?.broadcast_rows(5)?.sum()),
            ("add_row", |x, y| x.add_row(&y.reshape(&[12])?.slice(0, 0, 4)?)?.mul(x)?.sum()),
            ("mul_row", |x, y| x.mul_row(&y.reshape(&[12])?.slice(0, 0, 4)?)?.sum()),
        ];
        for (name, f) in &cases {
            for trial in 0..20 {
                let x = randn_tensor(&[3, 4], &mut rng);
                let y = randn_tensor(&[3, 4], &mut rng);
                let err = grad_check(|t| f(t, &y), &x, 1e-5).unwrap();
                assert!(err < 1e-5, "{name} trial {trial}: err = {err}");
                // Also check the second operand where the op has one.
                let err = grad_check(|t| f(&x, t), &y, 1e-5).unwrap();
                assert!(err < 1e-5, "{name} (rhs) trial {trial}: err = {err}");
            }
        }
    }

    #[test]
    fn ops_are_deterministic() {
        let mut rng1 = Rng::new(42);
        let mut rng2 = Rng::new(42);
        let a1 = randn_tensor(&[8, 8], &mut rng1);
        let a2 = randn_tensor(&[8, 8], &mut rng2);
        assert_eq!(a1.data(), a2.data());
        let o1 = a1.matmul(&a1).unwrap().softmax(1).unwrap();
        let o2 = a2.matmul(&a2).unwrap().softmax(1).unwrap();
        assert_eq!(o1.data(), o2.data());
    }
}
