//! Minimal reverse-mode automatic differentiation over `ndarray`.
//!
//! A [`Tape`] records every operation as a node holding its forward value and
//! a backward closure; [`Tape::backward`] walks the nodes in reverse creation
//! order (a topological order by construction) and accumulates gradients.
//! Everything is `f64`: the shapes in this crate are small and double
//! precision keeps the finite-difference test tolerances tight.
//!
//! Spatial tensors flow through the graph as flat 2-D matrices of shape
//! `(positions, channels)`; all window partitioning, patch routing and
//! space-to-depth reorganization is expressed through [`Tensor::gather`] /
//! [`Tensor::scatter`] with precomputed index vectors, so the differentiable
//! core stays free of geometry.

mod ops;
pub mod check;

pub use ops::concat_rows;

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

pub(crate) type Value = Rc<ArrayD<f64>>;
type BackFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<(usize, ArrayD<f64>)>>;

pub(crate) struct Node {
    pub(crate) value: Value,
    pub(crate) needs_grad: bool,
    pub(crate) back: Option<BackFn>,
}

/// Records a computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a tape. Cheap to copy.
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: ArrayD<f64>, needs_grad: bool, back: Option<BackFn>) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            needs_grad,
            back: if needs_grad { back } else { None },
        });
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable leaf (parameters, or inputs under test).
    pub fn var(&self, value: ArrayD<f64>) -> Tensor<'_> {
        self.push(value, true, None)
    }

    /// Non-differentiable leaf (data, masks, constants).
    pub fn constant(&self, value: ArrayD<f64>) -> Tensor<'_> {
        self.push(value, false, None)
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), v))
    }

    /// Accumulated gradients of `loss` with respect to every differentiable
    /// node. `loss` must be a single-element tensor.
    pub fn backward(&self, loss: Tensor<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward expects a scalar loss"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].value.raw_dim(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].as_ref() else {
                continue;
            };
            let Some(back) = nodes[id].back.as_ref() else {
                continue;
            };
            let contribs = back(g);
            for (pid, contrib) in contribs {
                debug_assert!(pid < id, "backward edge must point to an earlier node");
                match &mut grads[pid] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `t`, if `t` required one and was reached.
    pub fn wrt(&self, t: Tensor<'_>) -> Option<&ArrayD<f64>> {
        self.grads[t.id].as_ref()
    }

    /// Gradient with respect to `t`, defaulting to zeros of its shape.
    pub fn wrt_or_zero(&self, t: Tensor<'_>) -> ArrayD<f64> {
        match self.grads[t.id].as_ref() {
            Some(g) => g.clone(),
            None => ArrayD::zeros(t.value().raw_dim()),
        }
    }
}

impl<'t> Tensor<'t> {
    pub fn value(&self) -> Value {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on non-scalar tensor");
        *v.iter().next().unwrap()
    }
}
