//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once constructed. Each op records its parents and a
//! backward function; [`Tensor::backward`] walks the graph in reverse
//! topological order and deposits gradients on the leaves that requested
//! them. Everything runs on a single logical thread, but tensors are `Send +
//! Sync`, so independent graphs may be evaluated concurrently.

mod adam;
mod conv;
mod gradcheck;
mod loss;
mod matmul;
mod ops;
mod sample;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{
    check_gradients, max_relative_error, numeric_grad, weighted_sum, GradCheckReport,
};
pub use loss::{l2_consistency, softmax_cross_entropy};
pub use sample::{bilinear_gather, SampleGrid};

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} values, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("{0}")]
    Invalid(String),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// A backward rule: given d(loss)/d(output), produce d(loss)/d(parent) for
/// each parent (`None` for parents that do not need a gradient).
pub(crate) trait BackwardFn: Send + Sync {
    fn apply(&self, grad: &[f64], parents: &[Tensor]) -> Vec<Option<Vec<f64>>>;
}

pub(crate) struct ClosureBackward<F>(pub F);

impl<F> BackwardFn for ClosureBackward<F>
where
    F: Fn(&[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + Send + Sync,
{
    fn apply(&self, grad: &[f64], parents: &[Tensor]) -> Vec<Option<Vec<f64>>> {
        (self.0)(grad, parents)
    }
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<Box<dyn BackwardFn>>,
}

/// Differentiable dense tensor. Cheap to clone (shared payload).
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
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
    fn new_inner(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<Box<dyn BackwardFn>>,
    ) -> Tensor {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values,
                requires_grad,
                grad: Mutex::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Self::new_inner(shape.to_vec(), values, false, vec![], None))
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Self::from_values(shape, values)?;
        Ok(Self::new_inner(
            t.inner.shape.clone(),
            t.inner.values.clone(),
            true,
            vec![],
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![0.0; n], false, vec![], None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::new_inner(vec![], vec![v], false, vec![], None)
    }

    /// Interior node produced by an op. If no parent tracks gradients the
    /// graph edge is dropped entirely, so frozen-parameter forward passes
    /// stay constant-memory.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl BackwardFn + 'static,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        if parents.iter().any(|p| p.requires_grad()) {
            Self::new_inner(shape, values, true, parents, Some(Box::new(backward)))
        } else {
            Self::new_inner(shape, values, false, vec![], None)
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Scalar payload; panics if the tensor is not a single value.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Same values, cut loose from the graph.
    pub fn detach(&self) -> Tensor {
        Self::new_inner(
            self.inner.shape.clone(),
            self.inner.values.clone(),
            false,
            vec![],
            None,
        )
    }

    pub(crate) fn expect_4d(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            other => Err(TensorError::ShapeMismatch(format!(
                "{what} must be 4-d (N,C,H,W), got {other:?}"
            ))),
        }
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate on leaf
    /// tensors with `requires_grad`; the loss itself receives grad 1.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.inner.shape.clone()));
        }
        // Post-order DFS: suppliers end up before consumers, so the reversed
        // list processes every node only after its full gradient is known.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        visited.insert(self.id());
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((node, pi)) = stack.pop() {
            if pi < node.inner.parents.len() {
                stack.push((node.clone(), pi + 1));
                let p = &node.inner.parents[pi];
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p.clone(), 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let is_leaf = node.inner.backward.is_none();
            if node.inner.requires_grad && (is_leaf || node.id() == self.id()) {
                node.accumulate_grad(&g);
            }
            if let Some(bf) = &node.inner.backward {
                let parent_grads = bf.apply(&g, &node.inner.parents);
                debug_assert_eq!(parent_grads.len(), node.inner.parents.len());
                for (p, pg) in node.inner.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel());
                    match grads.entry(p.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (a, b) in e.get_mut().iter_mut().zip(&pg) {
                                *a += b;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "{op} requires equal shapes, got {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
