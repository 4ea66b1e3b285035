//! The reference-counted tensor handle and graph bookkeeping.

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

use crate::autograd::Op;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Returns whether operations currently record a graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.0));
    }
}

fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(enabled));
    let _guard = GradModeGuard(prev);
    f()
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

pub(crate) fn enable_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(true, f)
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) data: Vec<f64>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op>,
}

/// An immutable, cheaply clonable n-dimensional array of `f64` that
/// remembers how it was computed.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            data,
            shape,
            requires_grad,
            op,
        }))
    }

    /// A constant tensor that never receives gradients.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::build(data, shape.to_vec(), false, None)
    }

    /// A leaf that gradients are accumulated into.
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::build(data, shape.to_vec(), true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(vec![0.0; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::from_vec(vec![1.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_vec(vec![v; numel(shape)], shape)
    }

    /// Records `op` as the producer of `data` when grad mode is on and any
    /// input requires gradients; otherwise returns a plain constant.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        if is_grad_enabled() && op.parents().iter().any(|p| p.requires_grad()) {
            Self::build(data, shape, true, Some(op))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape() {
            &[n, c, h, w] => (n, c, h, w),
            s => panic!("expected a 4-d tensor, got shape {s:?}"),
        }
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.0.data.clone(), &self.0.shape)
    }

    /// Same values as a fresh gradient-receiving leaf.
    pub fn detach_leaf(&self) -> Tensor {
        Tensor::leaf(self.0.data.clone(), &self.0.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}
