use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::element::Element;
use crate::shape::numel;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether newly created ops on this thread record a backward graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_enabled(false, f)
}

pub(crate) fn with_grad_enabled<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

/// Backward rule of a recorded op.
///
/// Given the op output, the upstream gradient and the op inputs, return one
/// gradient per input. `needs[i]` is false when input `i` does not lead to any
/// requested gradient; the rule may return `None` for it.
pub(crate) type BackwardFn<T> = Box<
    dyn Fn(&Tensor<T>, &Tensor<T>, &[Tensor<T>], &[bool]) -> Vec<Option<Tensor<T>>> + Send + Sync,
>;

pub(crate) struct GradFn<T: Element> {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Node<T: Element> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn<T>>,
}

/// Immutable n-dimensional array with an optional backward graph.
///
/// Cloning is cheap (reference counted). Data is always contiguous row-major.
pub struct Tensor<T: Element = f32>(pub(crate) Arc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(g) = &self.0.grad_fn {
            d.field("op", &g.name);
        }
        if self.numel() <= 8 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

impl<T: Element> Tensor<T> {
    fn make(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {shape:?}",
            data.len()
        );
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (never receives gradients).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Self::make(Arc::new(data), shape.to_vec(), false, None)
    }

    pub fn from_f64s(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&v| T::from_f64_lossy(v)).collect(), shape)
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::make(Arc::new(data), shape.to_vec(), true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![T::from_f64_lossy(v)], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_vec(vec![T::from_f64_lossy(v); numel(shape)], shape)
    }

    /// Standard normal samples, drawn in f64 and rounded to `T`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(v)
            })
            .collect();
        Self::from_vec(data, shape)
    }

    /// Record the result of an op. The graph is kept only if recording is
    /// enabled and at least one input requires a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &[Tensor<T>], &[bool]) -> Vec<Option<Tensor<T>>>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self::from_op_arc(Arc::new(data), shape, name, inputs, backward)
    }

    pub(crate) fn from_op_arc(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &[Tensor<T>], &[bool]) -> Vec<Option<Tensor<T>>>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if !track {
            return Self::make(data, shape, false, None);
        }
        let grad_fn = GradFn {
            name,
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward: Box::new(backward),
        };
        Self::make(data, shape, true, Some(grad_fn))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0].as_f64()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Same data, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::make(Arc::clone(&self.0.data), self.0.shape.clone(), false, None)
    }

    /// Same data as a fresh trainable leaf.
    pub fn detach_param(&self) -> Self {
        Self::make(Arc::clone(&self.0.data), self.0.shape.clone(), true, None)
    }

    /// Leaf sharing this data whose gradient can be requested (e.g. an input image).
    pub fn requires_grad_leaf(&self) -> Self {
        self.detach_param()
    }

    /// Convert element type. The result is a constant.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.0.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            self.shape(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of shape and data.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits))
    }
}
