//! Reverse-mode differentiable tensor engine.
//!
//! Tensors are row-major, channel-first (`C x H x W` for feature maps) and
//! carry an optional lineage node so a scalar loss can be differentiated
//! back to every parameter that produced it. The engine implements exactly
//! the operations the network needs; there is no general broadcasting.

mod backward;
mod gemm;
mod ops;

pub use ops::Op;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::{CoadError, Result};

/// Element type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_count(n: usize) -> Self {
        Self::of_f64(n as f64)
    }
    /// Total order used for canonical summation (permutation-invariant sums).
    fn total_cmp(&self, other: &Self) -> std::cmp::Ordering;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn total_cmp(&self, other: &Self) -> std::cmp::Ordering {
        f32::total_cmp(self, other)
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn total_cmp(&self, other: &Self) -> std::cmp::Ordering {
        f64::total_cmp(self, other)
    }
}

thread_local! {
    static NEXT_TENSOR_ID: Cell<u64> = const { Cell::new(1) };
}

fn next_id() -> u64 {
    NEXT_TENSOR_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) struct TensorInner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    /// True when this node or anything upstream requires a gradient;
    /// backward traverses only such nodes.
    needs_grad: bool,
    op: Option<Op<T>>,
}

/// N-dimensional array with optional gradient slot and autograd lineage.
///
/// Cloning is cheap (shared handle). A tensor with no lineage and
/// `requires_grad == false` is a constant; backward never touches it.
pub struct Tensor<T: Scalar> {
    pub(crate) inner: Rc<TensorInner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn from_parts(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = requires_grad || op.as_ref().is_some_and(|o| o.any_input_needs_grad());
        // Constants do not keep lineage alive.
        let op = if needs_grad { op } else { None };
        Tensor {
            inner: Rc::new(TensorInner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                needs_grad,
                op,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(CoadError::ShapeMismatch {
                op: "new",
                detail: format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    shape.iter().product::<usize>(),
                    data.len()
                ),
            });
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(CoadError::ShapeMismatch {
                op: "new",
                detail: format!("zero extent in shape {shape:?}"),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients (used for parameters).
    pub fn variable(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        let data = t.to_vec();
        Ok(Self::from_parts(t.inner.shape.clone(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; n], false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![1], vec![v], false, None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        Self::from_parts(shape, data, false, Some(op))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.needs_grad
    }

    pub(crate) fn op(&self) -> Option<&Op<T>> {
        self.inner.op.as_ref()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Replace the stored values of a leaf tensor (optimizer step,
    /// finite-difference perturbation). Length must match.
    pub fn set_data(&self, data: &[T]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_data length mismatch");
        d.copy_from_slice(data);
    }

    pub(crate) fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, &b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Detached constant copy of this tensor's current values.
    pub fn detach(&self) -> Tensor<T> {
        Self::from_parts(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            None,
        )
    }

    /// Convert element precision (detached; used for checkpoint i/o).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .inner
            .data
            .borrow()
            .iter()
            .map(|&v| U::of_f64(v.as_f64()))
            .collect();
        Tensor::from_parts(self.inner.shape.clone(), data, false, None)
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoadError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(), other.shape()),
            });
        }
        Ok(())
    }

    /// Expects rank 3 and returns (C, H, W).
    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(CoadError::ShapeMismatch {
                op,
                detail: format!("expected rank-3 CxHxW tensor, got {:?}", self.shape()),
            }),
        }
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape() {
            [m, n] => Ok((m, n)),
            _ => Err(CoadError::ShapeMismatch {
                op,
                detail: format!("expected rank-2 matrix, got {:?}", self.shape()),
            }),
        }
    }
}

/// Sum of the given values in a canonical (value-sorted) order, so the
/// result does not depend on the caller's element order. Used by the
/// group aggregation ops to make them bit-exactly permutation-invariant.
pub(crate) fn canonical_sum<T: Scalar>(buf: &mut [T]) -> T {
    buf.sort_unstable_by(|a, b| Scalar::total_cmp(a, b));
    let mut acc = T::zero();
    for &v in buf.iter() {
        acc += v;
    }
    acc
}
