//! Dense tensors with reverse-mode gradient propagation.
//!
//! Every operation that participates in differentiation builds a node in an
//! implicit DAG: the output tensor keeps handles to its inputs plus a closure
//! that scatters the output gradient back onto them. `backward` on a scalar
//! root replays those closures in reverse topological order.
//!
//! Two precisions are supported through the [`Element`] trait: `f32` for the
//! training path and `f64` for finite-difference verification.

mod conv;
mod fdcheck;
mod norm;
mod ops;

pub use fdcheck::{finite_diff_check, FdError, DEFAULT_FD_STEP};
pub use norm::BatchNorm;
pub use ops::{broadcast_shape, concat_axis};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt::{Debug, Display};
use std::rc::Rc;

use num_traits::{Float, FromPrimitive};

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Element: Float + FromPrimitive + Debug + Display + 'static {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Element")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("any Element converts to f64")
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// Shorthand for converting literals inside generic code.
pub(crate) fn lit<T: Element>(v: f64) -> T {
    T::from_f64_lossy(v)
}

type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Inner<T: Element> {
    shape: Vec<usize>,
    value: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward_fn: Option<BackwardFn<T>>,
    backward_done: Cell<bool>,
}

/// Dense N-dimensional array, row-major, with optional gradient tracking.
///
/// Cloning a `Tensor` is cheap: it copies the handle, not the storage.
pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

pub(crate) fn check_finite<T: Element>(data: &[T], op: &str) {
    for (i, v) in data.iter().enumerate() {
        assert!(
            v.is_finite(),
            "non-finite value {v} at flat index {i} produced by `{op}`"
        );
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward_fn: Option<BackwardFn<T>>,
    ) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {shape:?} does not match {} stored values",
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                shape,
                value: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward_fn,
                backward_done: Cell::new(false),
            }),
        }
    }

    /// Untracked tensor from row-major values.
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        check_finite(&data, "new");
        Self::from_parts(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// Gradient-tracked leaf (parameter or differentiation target).
    pub fn new_tracked(shape: &[usize], data: Vec<T>) -> Self {
        check_finite(&data, "new_tracked");
        Self::from_parts(shape.to_vec(), data, true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![T::zero(); numel(shape)])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::new(shape, vec![v; numel(shape)])
    }

    pub fn scalar(v: T) -> Self {
        Self::new(&[], vec![v])
    }

    /// Operation result node. Skips recording when no input is tracked.
    pub(crate) fn from_op(
        op: &str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward_fn: impl Fn(&[T]) + 'static,
    ) -> Self {
        check_finite(&data, op);
        if parents.iter().any(|p| p.needs_grad()) {
            Self::from_parts(shape, data, false, parents, Some(Box::new(backward_fn)))
        } else {
            Self::from_parts(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this node participates in gradient propagation.
    pub fn needs_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.backward_fn.is_some()
    }

    pub fn values(&self) -> Ref<'_, Vec<T>> {
        self.inner.value.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.value.borrow().clone()
    }

    /// Scalar extraction; panics unless the tensor holds exactly one value.
    pub fn item(&self) -> T {
        let v = self.inner.value.borrow();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape());
        v[0]
    }

    /// Overwrites stored values in place. Used by the optimizer and the
    /// finite-difference oracle; never call on a tensor inside a live graph
    /// whose backward you still intend to run.
    pub fn set_values(&self, data: &[T]) {
        check_finite(data, "set_values");
        let mut v = self.inner.value.borrow_mut();
        assert_eq!(v.len(), data.len(), "set_values length mismatch");
        v.copy_from_slice(data);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
        self.inner.backward_done.set(false);
    }

    /// Accumulates into the gradient buffer, allocating zeros on first touch.
    /// No-op for nodes outside the gradient path.
    pub(crate) fn with_grad_mut(&self, f: impl FnOnce(&mut [T])) {
        if !self.needs_grad() {
            return;
        }
        let n = self.len();
        let mut g = self.inner.grad.borrow_mut();
        f(g.get_or_insert_with(|| vec![T::zero(); n]));
    }

    fn ptr(&self) -> *const Inner<T> {
        Rc::as_ptr(&self.inner)
    }

    /// Reverse-mode sweep from a scalar root. Every tracked leaf reachable
    /// from the root receives (accumulates) its adjoint.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward requires a scalar root, got shape {:?}", self.shape());
        assert!(
            !self.inner.backward_done.get(),
            "backward called twice on the same root without zero_grad"
        );
        self.inner.backward_done.set(true);

        // Iterative post-order DFS; reversed it yields a valid replay order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<*const Inner<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.ptr());
        while let Some((node, child)) = stack.pop() {
            if child < node.inner.parents.len() {
                let next = node.inner.parents[child].clone();
                stack.push((node, child + 1));
                if seen.insert(next.ptr()) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.with_grad_mut(|g| g[0] = T::one());
        for node in order.iter().rev() {
            if let Some(fun) = &node.inner.backward_fn {
                let guard = node.inner.grad.borrow();
                if let Some(g) = guard.as_deref() {
                    fun(g);
                }
            }
        }
    }
}

impl<T: Element> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("value", &self.inner.value.borrow())
            .finish()
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(3.5f64);
        assert_eq!(t.item(), 3.5);
        assert_eq!(t.shape(), &[] as &[usize]);
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn shape_value_mismatch_rejected() {
        let _ = Tensor::new(&[2, 3], vec![1.0f32; 5]);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_rejected() {
        let _ = Tensor::new(&[2], vec![1.0f64, f64::NAN]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::new_tracked(&[2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.sum_all();
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_square_gives_two_x() {
        let x = Tensor::new_tracked(&[3], vec![1.0f64, -2.0, 0.5]);
        let y = x.mul(&x).sum_all();
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "backward called twice")]
    fn double_backward_rejected() {
        let x = Tensor::new_tracked(&[2], vec![1.0f64, 2.0]);
        let y = x.sum_all();
        y.backward();
        y.backward();
    }

    #[test]
    fn grad_accumulates_across_uses() {
        let x = Tensor::new_tracked(&[2], vec![3.0f64, 4.0]);
        let y = x.add(&x).sum_all(); // y = 2x
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn untracked_graph_records_nothing() {
        let x = Tensor::new(&[2], vec![1.0f64, 2.0]);
        let y = x.mul(&x);
        assert!(!y.needs_grad());
    }
}
