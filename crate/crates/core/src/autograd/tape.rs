//! Define-by-run reverse-mode tape.
//!
//! A fresh [`Tape`] is built for every forward pass. Each recorded node holds
//! its forward value and the [`Function`] whose vector-Jacobian product moves
//! gradients back to its parents. Parents always precede children, so a
//! single reverse sweep over the node list is a valid topological order.

use std::fmt;

use crate::autograd::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
pub trait Function<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns, for every input `i` with `needs[i]`, the gradient of the loss
    /// with respect to that input given `grad` for the output.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

enum Origin<T: Scalar> {
    Constant,
    Variable,
    Param { id: ParamId, trainable: bool },
    Op {
        func: Box<dyn Function<T>>,
        parents: Vec<NodeId>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    origin: Origin<T>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, waiting to be
/// folded into the running estimates.
#[derive(Clone, Debug)]
pub struct RunningStatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub momentum: T,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    running_updates: Vec<RunningStatUpdate<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            running_updates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, origin: Origin<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Origin::Constant, false)
    }

    /// Input whose gradient is reported by [`Tape::gradients`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Origin::Variable, true)
    }

    /// Places a copy of a stored parameter on the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.push(
            p.value.clone(),
            Origin::Param {
                id,
                trainable: p.trainable,
            },
            p.trainable,
        )
    }

    /// Appends an operation node whose inputs are already on the tape.
    pub fn record(
        &mut self,
        func: impl Function<T> + 'static,
        parents: &[NodeId],
        value: Tensor<T>,
    ) -> NodeId {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(
            value,
            Origin::Op {
                func: Box::new(func),
                parents: parents.to_vec(),
            },
            requires_grad,
        )
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        match &self.nodes[id.0].origin {
            Origin::Constant => "constant",
            Origin::Variable => "variable",
            Origin::Param { .. } => "param",
            Origin::Op { func, .. } => func.name(),
        }
    }

    /// Names of every recorded operation, in forward order.
    pub fn op_names(&self) -> Vec<&'static str> {
        (0..self.nodes.len()).map(|i| self.op_name(NodeId(i))).collect()
    }

    pub(crate) fn push_running_update(&mut self, update: RunningStatUpdate<T>) {
        self.running_updates.push(update);
    }

    /// Folds pending batch-norm statistics into their running estimates.
    pub fn commit_running_stats(&mut self, store: &mut ParamStore<T>) {
        for u in self.running_updates.drain(..) {
            let keep = T::one() - u.momentum;
            for (r, &b) in store
                .get_mut(u.mean)
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.batch_mean)
            {
                *r = keep * *r + u.momentum * b;
            }
            for (r, &b) in store
                .get_mut(u.var)
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.batch_var)
            {
                *r = keep * *r + u.momentum * b;
            }
        }
    }

    /// Runs the reverse sweep from a scalar node.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients<T>> {
        let out = &self.nodes[loss.0].value;
        if out.len() != 1 {
            return Err(Error::NonScalarLoss(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Origin::Op { func, parents } = &self.nodes[i].origin else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let contributions = func.backward(&inputs, &self.nodes[i].value, &grad, &needs);
            debug_assert_eq!(contributions.len(), parents.len(), "{}", func.name());
            for (parent, contribution) in parents.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(c.len(), self.nodes[parent.0].value.len(), "{}", func.name());
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, &v)| *a = *a + v),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulates d(loss)/d(parameter) into every trainable parameter's
    /// gradient slot. Callers zero the slots between steps.
    pub fn backprop(&self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Origin::Param {
                id,
                trainable: true,
            } = node.origin
            {
                if let Some(g) = &grads.grads[i] {
                    let slot = store.get_mut(id);
                    if slot.trainable {
                        slot.grad
                            .data_mut()
                            .iter_mut()
                            .zip(g)
                            .for_each(|(a, &v)| *a = *a + v);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradients of leaf nodes (variables and parameters) after a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf node, or `None` when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_mul_sum_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.variable(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);

        let x = tape.variable(Tensor::new(&[1], vec![3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        assert_eq!(tape.value(sq).data(), &[9.0]);
        let g = tape.gradients(sq).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);

        let ones = tape.variable(Tensor::ones(&[2, 2]).unwrap());
        let s = tape.sum(ones);
        assert_eq!(tape.value(s).data(), &[4.0]);
        let g = tape.gradients(s).unwrap();
        assert_eq!(g.get(ones).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn mismatched_add_names_op_and_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(Tensor::zeros(&[2]).unwrap());
        let b = tape.variable(Tensor::zeros(&[3]).unwrap());
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(Tensor::zeros(&[2]).unwrap());
        assert!(matches!(tape.gradients(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backprop_into_params() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("w", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), true)
            .unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let sq = tape.mul(wn, wn).unwrap();
        let loss = tape.sum(sq);
        tape.backprop(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sum_of_five_has_unit_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(&[5], 0.3).unwrap(), true).unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let loss = tape.sum(wn);
        tape.backprop(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0; 5]);
    }

    #[test]
    fn branch_gradients_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("w", Tensor::new(&[2], vec![1.5, -2.0]).unwrap(), true)
            .unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let b1 = tape.scale(wn, 3.0);
        let b2 = tape.mul(wn, wn).unwrap();
        let s = tape.add(b1, b2).unwrap();
        let loss = tape.sum(s);
        tape.backprop(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[3.0 + 3.0, 3.0 - 4.0]);
    }

    #[test]
    fn frozen_param_keeps_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(&[3], 2.0).unwrap(), false).unwrap();
        let v = store.add("v", Tensor::full(&[3], 1.0).unwrap(), true).unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let vn = tape.param(&store, v);
        let p = tape.mul(wn, vn).unwrap();
        let loss = tape.sum(p);
        tape.backprop(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[0.0; 3]);
        assert_eq!(store.get(v).grad.data(), &[2.0; 3]);
    }

    #[test]
    fn repeated_backprop_is_bit_identical() {
        let mut store = ParamStore::<f32>::new();
        let w = store
            .add("w", Tensor::from_fn(&[7], |i| (i as f32 * 0.37).sin()).unwrap(), true)
            .unwrap();
        let run = |store: &mut ParamStore<f32>| {
            store.zero_grad();
            let mut tape = Tape::new();
            let wn = tape.param(store, w);
            let s = tape.sigmoid(wn);
            let m = tape.mul(s, wn).unwrap();
            let loss = tape.mean(m);
            tape.backprop(loss, store).unwrap();
            store.get(w).grad.data().to_vec()
        };
        let a = run(&mut store);
        let b = run(&mut store);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
