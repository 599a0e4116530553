//! Reverse mode automatic differentiation on dense 2-d tensors.
//!
//! Tensors form a DAG: every operation records its parents and a closure
//! that pushes the node's gradient into those parents. Node ids grow
//! monotonically at creation, so descending id order is a valid reverse
//! topological order and [`Tensor::backward`] needs no explicit sort pass
//! beyond that.
//!
//! Gradients of leaf tensors (parameters) accumulate across backward calls
//! until [`Tensor::zero_grad`] resets them; interior node gradients are
//! cleared at the start of every backward pass.

mod adam;
mod check;
mod ops;

pub use adam::AdamState;
pub use check::{finite_difference_check, GradCheckReport};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{DgektError, Result};
use crate::scalar::Scalar;

thread_local! {
    static NEXT_TENSOR_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_TENSOR_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn<S> = Box<dyn Fn(&TensorInner<S>)>;

pub(crate) struct TensorInner<S: Scalar> {
    id: u64,
    rows: usize,
    cols: usize,
    pub(crate) data: RefCell<Vec<S>>,
    pub(crate) grad: RefCell<Vec<S>>,
    needs_grad: bool,
    parents: Vec<Tensor<S>>,
    back: Option<BackwardFn<S>>,
}

/// Shared handle to a node in the computation graph.
#[derive(Clone)]
pub struct Tensor<S: Scalar>(Rc<TensorInner<S>>);

impl<S: Scalar> Tensor<S> {
    fn new_inner(
        rows: usize,
        cols: usize,
        data: Vec<S>,
        needs_grad: bool,
        parents: Vec<Tensor<S>>,
        back: Option<BackwardFn<S>>,
    ) -> Tensor<S> {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        let grad = if needs_grad {
            vec![S::zero(); rows * cols]
        } else {
            Vec::new()
        };
        Tensor(Rc::new(TensorInner {
            id: next_id(),
            rows,
            cols,
            data: RefCell::new(data),
            grad: RefCell::new(grad),
            needs_grad,
            parents,
            back,
        }))
    }

    /// Leaf tensor that participates in differentiation.
    pub fn parameter(rows: usize, cols: usize, data: Vec<S>) -> Tensor<S> {
        Tensor::new_inner(rows, cols, data, true, Vec::new(), None)
    }

    /// Leaf tensor excluded from differentiation.
    pub fn constant(rows: usize, cols: usize, data: Vec<S>) -> Tensor<S> {
        Tensor::new_inner(rows, cols, data, false, Vec::new(), None)
    }

    pub fn zeros_const(rows: usize, cols: usize) -> Tensor<S> {
        Tensor::constant(rows, cols, vec![S::zero(); rows * cols])
    }

    pub fn scalar_const(v: S) -> Tensor<S> {
        Tensor::constant(1, 1, vec![v])
    }

    /// Interior node produced by an operation. Constant folds when no
    /// parent participates in differentiation.
    pub(crate) fn from_op(
        rows: usize,
        cols: usize,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        back: impl Fn(&TensorInner<S>) + 'static,
    ) -> Tensor<S> {
        let needs_grad = parents.iter().any(|p| p.needs_grad());
        if needs_grad {
            Tensor::new_inner(rows, cols, data, true, parents, Some(Box::new(back)))
        } else {
            Tensor::new_inner(rows, cols, data, false, Vec::new(), None)
        }
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.rows, self.0.cols)
    }

    pub fn len(&self) -> usize {
        self.0.rows * self.0.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.0.data.borrow()
    }

    /// Mutable value access, used by the optimizer and by finite
    /// difference probing. Never call while a forward pass borrows the
    /// tensor.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.0.data.borrow_mut()
    }

    pub fn grad(&self) -> Ref<'_, Vec<S>> {
        self.0.grad.borrow()
    }

    pub(crate) fn grad_mut(&self) -> RefMut<'_, Vec<S>> {
        self.0.grad.borrow_mut()
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.len(), 1, "item() requires a 1x1 tensor");
        self.0.data.borrow()[0]
    }

    pub fn zero_grad(&self) {
        for g in self.0.grad.borrow_mut().iter_mut() {
            *g = S::zero();
        }
    }

    /// Value copy detached from the graph; gradients do not flow through.
    pub fn detach(&self) -> Tensor<S> {
        Tensor::constant(self.0.rows, self.0.cols, self.0.data.borrow().clone())
    }

    /// Accumulates d(self)/d(leaf) into every reachable leaf gradient.
    /// `self` must be 1x1. Interior gradients are reset first, so calling
    /// this twice on the same graph doubles leaf gradients exactly.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(DgektError::shape("backward", self.shape(), (1, 1)));
        }
        if !self.0.needs_grad {
            return Ok(());
        }

        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.0.id);
        while let Some(t) = stack.pop() {
            for p in &t.0.parents {
                if p.needs_grad() && seen.insert(p.0.id) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.0.id.cmp(&a.0.id));

        for t in &order {
            if t.0.back.is_some() {
                t.zero_grad();
            }
        }
        self.0.grad.borrow_mut()[0] += S::one();

        for t in &order {
            if let Some(back) = &t.0.back {
                back(&t.0);
            }
        }
        Ok(())
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("needs_grad", &self.0.needs_grad)
            .finish()
    }
}
