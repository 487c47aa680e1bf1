//! Dense `f32` tensors with tape-based reverse-mode differentiation.
//!
//! Every operation that has at least one gradient-tracking input records a
//! node holding its parents and a backward closure. [`Tensor::backward`]
//! walks the recorded graph in reverse topological order and accumulates
//! gradients into the leaves that were created with `requires_grad`.
//! Gradients accumulate across calls until [`Tensor::zero_grad`].
//!
//! Tensors are immutable once built; only the gradient buffer of a leaf is
//! ever written after construction.

mod conv;
mod linalg;
mod norm;
mod ops;

pub use conv::{conv2d, upsample_nearest2x, Conv2dGeometry};
pub use linalg::{bmm, linear, matmul};
pub use norm::{cross_entropy, group_norm, softmax_last};
pub use ops::*;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Dimension {
        op,
        detail: detail.into(),
    })
}

/// Returns per-parent gradient contributions given the gradient of the output.
pub(crate) type BackwardFn = Box<dyn Fn(&[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync>;

struct History {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    history: Option<History>,
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any history on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

/// Value equality: same shape and bit-identical data.
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.history.as_ref().map(|h| h.op))
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, history: Option<History>) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            history,
        }))
    }

    /// Constant tensor. Fails if `data` does not match `shape` or a dimension is zero.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::checked(shape, data, false)
    }

    /// Leaf tensor that collects gradients.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::checked(shape, data, true)
    }

    fn checked(shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return dim_err("new", format!("zero-sized dimension in {shape:?}"));
        }
        if numel(shape) != data.len() {
            return dim_err(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            );
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self::build(shape.to_vec(), data, requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Records the result of an operation. History is kept only when grad
    /// mode is on and some parent tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(Tensor::tracks_grad);
        let history = track.then(|| History {
            op,
            parents,
            backward: Box::new(backward),
        });
        Ok(Self::build(shape, data, false, history))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for leaves that collect gradients and for any recorded result.
    pub fn tracks_grad(&self) -> bool {
        self.0.requires_grad || self.0.history.is_some()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.history.as_ref().map(|h| h.op)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, no history, gradient collection as requested.
    pub fn detach_with_grad(&self, requires_grad: bool) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), requires_grad, None)
    }

    pub fn detach(&self) -> Tensor {
        self.detach_with_grad(false)
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Multiplies the accumulated gradient in place, if any.
    pub fn scale_grad(&self, factor: f32) {
        if let Some(g) = self.0.grad.lock().expect("grad lock").as_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Backpropagates from a one-element tensor with seed 1.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward on tensor of shape {:?} needs an explicit seed",
                self.shape()
            )));
        }
        self.backward_with(&[1.0])
    }

    /// Backpropagates with an explicit output gradient.
    pub fn backward_with(&self, seed: &[f32]) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(TensorError::Usage(format!(
                "seed has {} values, tensor has {}",
                seed.len(),
                self.numel()
            )));
        }
        if !self.tracks_grad() {
            return Err(TensorError::Usage(
                "backward on a tensor with no recorded history".into(),
            ));
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f32>> = HashMap::new();
        grads.insert(self.0.id, seed.to_vec());
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            if let Some(h) = &node.0.history {
                let parent_grads = (h.backward)(&g);
                debug_assert_eq!(parent_grads.len(), h.parents.len(), "{}", h.op);
                for (parent, pg) in h.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.tracks_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel(), "grad size from {}", h.op);
                    match grads.get_mut(&parent.0.id) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(parent.0.id, pg);
                        }
                    }
                }
            } else if node.0.requires_grad {
                let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // (node, children pushed?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(h) = &node.0.history {
                for p in &h.parents {
                    if p.tracks_grad() && !seen.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
