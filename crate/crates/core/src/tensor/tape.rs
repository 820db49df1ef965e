//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] records one node per operation in execution order, so parents
//! always precede children and a single reverse sweep visits every node once.
//! Each node keeps a closure that maps its output gradient to gradients for
//! the parents that require one; values live in the [`Var`] handles.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{contract_err, Result};

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
}

/// Single-owner operation record. Cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<Inner>>,
}

/// A tensor value recorded on a tape.
#[derive(Clone)]
pub struct Var {
    id: usize,
    value: Tensor,
    requires_grad: bool,
    tape: Tape,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("requires_grad", &self.requires_grad)
            .field("value", &self.value)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, parents: Vec<usize>, backward: Option<BackwardFn>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { parents, backward });
        inner.nodes.len() - 1
    }

    /// A trainable input whose gradient [`Tape::backward`] reports.
    pub fn leaf(&self, value: Tensor) -> Var {
        let id = self.push_node(Vec::new(), None);
        Var {
            id,
            value,
            requires_grad: true,
            tape: self.clone(),
        }
    }

    /// A value treated as a constant by differentiation.
    pub fn constant(&self, value: Tensor) -> Var {
        let id = self.push_node(Vec::new(), None);
        Var {
            id,
            value,
            requires_grad: false,
            tape: self.clone(),
        }
    }

    /// Records an operation. `backward` receives the output gradient and must
    /// return one entry per parent (entries for parents that do not require a
    /// gradient are ignored).
    pub(crate) fn record(
        &self,
        value: Tensor,
        parents: &[&Var],
        backward: impl Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        debug_assert!(
            parents.iter().all(|p| Rc::ptr_eq(&p.tape.inner, &self.inner)),
            "operands recorded on different tapes"
        );
        debug_assert!(
            value.is_finite() || parents.iter().any(|p| !p.value.is_finite()),
            "non-finite output from finite inputs: {value:?}"
        );
        let requires_grad = parents.iter().any(|p| p.requires_grad);
        let id = if requires_grad {
            let ids = parents.iter().map(|p| p.id).collect();
            self.push_node(ids, Some(Box::new(backward)))
        } else {
            self.push_node(Vec::new(), None)
        };
        Var {
            id,
            value,
            requires_grad,
            tape: self.clone(),
        }
    }

    /// Gradients of a scalar `loss` with respect to every leaf on this tape.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value.numel() != 1 {
            return contract_err(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss.value.shape()),
            );
        }
        if !Rc::ptr_eq(&loss.tape.inner, &self.inner) {
            return contract_err("backward", "loss was recorded on another tape");
        }
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        if loss.requires_grad {
            grads[loss.id] = Some(Tensor::full(loss.value.shape(), 1.0)?);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            let Some(backward) = &node.backward else {
                leaves[id] = Some(g);
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut grads[p] {
                    Some(acc) => {
                        debug_assert_eq!(acc.shape(), pg.shape());
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.leaves.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when the loss does not depend on it.
    pub fn wrt(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::from_parts(var.value.shape().to_vec(), vec![0.0; var.value.numel()]))
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// The same value as a constant: gradients stop here.
    pub fn detach(&self) -> Var {
        self.tape.constant(self.value.clone())
    }

    /// A constant on the same tape as `self`.
    pub fn constant_like(&self, value: Tensor) -> Var {
        self.tape.constant(value)
    }
}
