//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards is a valid
//! topological order. Trainable tensors live in [`Parameter`] handles that
//! outlive the tape; `backward` accumulates (`+=`) into their gradients.
//!
//! New differentiable operations implement [`Backward`] and are recorded
//! with [`Tape::custom`].

mod ops;

pub use ops::softmax_rows;

use std::cell::{Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct ParamData<T> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
}

/// Shared handle to a named trainable tensor and its accumulated gradient.
pub struct Parameter<T = f64>(Rc<RefCell<ParamData<T>>>);

impl<T> Clone for Parameter<T> {
    fn clone(&self) -> Self {
        Self(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.0.borrow();
        write!(f, "Parameter({}, {:?})", d.name, d.value.shape())
    }
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self(Rc::new(RefCell::new(ParamData {
            name: name.into(),
            value,
            grad: None,
        })))
    }

    pub fn name(&self) -> String {
        self.0.borrow().name.clone()
    }

    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        Ref::map(self.0.borrow(), |d| &d.value)
    }

    pub fn value_mut(&self) -> RefMut<'_, Tensor<T>> {
        RefMut::map(self.0.borrow_mut(), |d| &mut d.value)
    }

    pub fn set_value(&self, value: Tensor<T>) -> Result<()> {
        let mut d = self.0.borrow_mut();
        if d.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                d.name,
                d.value.shape(),
                value.shape()
            )));
        }
        d.value = value;
        Ok(())
    }

    pub fn grad(&self) -> Option<Ref<'_, Tensor<T>>> {
        Ref::filter_map(self.0.borrow(), |d| d.grad.as_ref()).ok()
    }

    /// Resets an allocated gradient to zeros; no-op if none was allocated.
    pub fn zero_grad(&self) {
        if let Some(g) = self.0.borrow_mut().grad.as_mut() {
            g.map_inplace(|_| T::zero());
        }
    }

    fn accumulate(&self, g: Tensor<T>) -> Result<()> {
        let mut d = self.0.borrow_mut();
        match d.grad.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => {
                if g.shape() != d.value.shape() {
                    return Err(Error::Shape(format!(
                        "gradient {:?} for parameter {} of shape {:?}",
                        g.shape(),
                        d.name,
                        d.value.shape()
                    )));
                }
                d.grad = Some(g);
                Ok(())
            }
        }
    }

    /// True when both handles refer to the same parameter.
    pub fn same(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

/// Resets the gradients of every parameter in `params`.
pub fn zero_grad<T: Real>(params: &[Parameter<T>]) {
    params.iter().for_each(Parameter::zero_grad);
}

/// Values available to a backward rule.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub upstream: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// Whether each input needs a gradient; rules may return `None` where
    /// this is false.
    pub needs: Vec<bool>,
}

/// Backward rule of a recorded operation. Must return one entry per input,
/// each shaped like that input when present.
pub trait Backward<T: Real> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;

    fn name(&self) -> &'static str;
}

struct Node<T: Real> {
    value: Tensor<T>,
    parents: Vec<usize>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    param: Option<Parameter<T>>,
}

/// Computation graph recorded during one forward pass.
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is kept on the tape when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            op: None,
            requires_grad,
            grad: None,
            param: None,
        })
    }

    /// Leaf bound to a parameter; gradients accumulate into the parameter.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        self.push(Node {
            value: p.value().clone(),
            parents: Vec::new(),
            op: None,
            requires_grad: true,
            grad: None,
            param: Some(p.clone()),
        })
    }

    /// Records the result of a custom operation.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn Backward<T>>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            parents: inputs.iter().map(|v| v.0).collect(),
            op: requires_grad.then_some(op),
            requires_grad,
            grad: None,
            param: None,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a non-parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Resets leaf gradients stored on the tape.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.map_inplace(|_| T::zero());
            }
        }
    }

    /// Back-propagates from a scalar `loss`, seeding `dloss/dloss = 1`.
    /// Leaf gradients are accumulated, so calling this twice without
    /// zeroing doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 || lv.rank() > 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(op) = &node.op {
                let ctx = BackwardCtx {
                    upstream: &g,
                    inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                    output: &node.value,
                    needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
                };
                let pgrads = op.backward(&ctx)?;
                if pgrads.len() != node.parents.len() {
                    return Err(Error::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        pgrads.len(),
                        node.parents.len()
                    )));
                }
                for (&p, pg) in node.parents.iter().zip(pgrads) {
                    let Some(pg) = pg else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    if pg.shape() != self.nodes[p].value.shape() {
                        return Err(Error::Shape(format!(
                            "{} produced gradient {:?} for input {:?}",
                            op.name(),
                            pg.shape(),
                            self.nodes[p].value.shape()
                        )));
                    }
                    match grads[p].as_mut() {
                        Some(acc) => acc.add_assign(&pg)?,
                        None => grads[p] = Some(pg),
                    }
                }
            } else if let Some(param) = &node.param {
                param.accumulate(g)?;
            } else {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}
