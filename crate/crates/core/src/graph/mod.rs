//! Reverse-mode automatic differentiation on a recorded tape.
//!
//! A [`Graph`] records every operation as a node holding its output value and
//! a closure computing the vector-Jacobian product for each parent. Primitives
//! are coarse (linear, conv2d, selective scan, ...) with hand-written
//! backward rules; each one is checked against central finite differences in
//! `gradcheck`.

mod conv;
pub(crate) mod elementwise;
mod linalg;
mod norm;
mod shape;

pub use elementwise::softplus_inverse;
pub use linalg::HeadLayout;

use crate::error::{Error, Result};
use crate::memory;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn<S> = Box<dyn Fn(&Tensor<S>) -> Result<Vec<Option<Tensor<S>>>>>;

struct Node<S: Scalar> {
    value: Tensor<S>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<S>>,
    op: &'static str,
    requires_grad: bool,
    differentiable: bool,
}

/// Test hook: scales the parent gradients produced by every node of one op.
#[derive(Debug, Clone, Copy)]
pub struct GradFault {
    pub op: &'static str,
    pub factor: f64,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: Vec<Var>,
    fault: Option<GradFault>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn inject_fault(&mut self, fault: GradFault) {
        self.fault = Some(fault);
    }

    fn leaf(&mut self, value: Tensor<S>, requires_grad: bool, op: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            op,
            requires_grad,
            differentiable: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input (no gradient is tracked).
    pub fn input(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, false, "input")
    }

    /// A leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, true, "variable")
    }

    /// Places every parameter of `store` on the tape, in declaration order.
    pub fn bind_params(&mut self, store: &ParamStore<S>, trainable: bool) -> Result<()> {
        self.params.clear();
        for p in store.iter() {
            let v = self.leaf(p.value.clone(), trainable, "param")?;
            self.params.push(v);
        }
        Ok(())
    }

    /// The tape variable bound to parameter `id`.
    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.index()]
    }

    pub fn bound_params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn check_budget(&self) -> Result<()> {
        if memory::budget_exceeded() {
            // the caller that opened the scope knows the sequence length and rewrites this
            return Err(Error::Capacity { seq_len: 0, budget: 0 });
        }
        Ok(())
    }

    /// Records a differentiable op. `backward` maps the output gradient to
    /// one optional gradient per parent (same order as `parents`).
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<S>,
        parents: &[Var],
        backward: BackwardFn<S>,
    ) -> Result<Var> {
        self.check_budget()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            op,
            requires_grad,
            differentiable: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an op that has no derivative; gradients reaching it are an error.
    pub(crate) fn push_nondiff(&mut self, op: &'static str, value: Tensor<S>, parents: &[Var]) -> Result<Var> {
        self.check_budget()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: None,
            op,
            requires_grad,
            differentiable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::shape("backward", &[1], lv.shape()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![S::one()]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.differentiable {
                return Err(Error::UnsupportedOp(node.op));
            }
            let backward = node.backward.as_ref().expect("requires_grad node has backward");
            let mut parent_grads = backward(&g)?;
            if parent_grads.len() != node.parents.len() {
                return Err(Error::Malformed {
                    what: "backward rule",
                    detail: format!("{} returned {} gradients for {} parents", node.op, parent_grads.len(), node.parents.len()),
                });
            }
            if let Some(f) = self.fault {
                if f.op == node.op {
                    for pg in parent_grads.iter_mut().flatten() {
                        *pg = pg.scale(S::of(f.factor));
                    }
                }
            }
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                if pg.shape() != self.nodes[p.0].value.shape() {
                    return Err(Error::shape(node.op, self.nodes[p.0].value.shape(), pg.shape()));
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaves after a backward sweep.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape if nothing flowed into it.
    pub fn get_or_zeros(&self, g: &Graph<S>, v: Var) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like_shape(g.shape(v)))
    }

    /// Gradients for every bound parameter, in declaration order.
    pub fn params(&self, g: &Graph<S>) -> Vec<Tensor<S>> {
        g.bound_params().iter().map(|&v| self.get_or_zeros(g, v)).collect()
    }
}

/// Gradient of a scalar loss with respect to every parameter of `store`.
///
/// Returns the loss value and one gradient per parameter (declaration order).
pub fn grad<S, F>(store: &ParamStore<S>, loss_fn: F) -> Result<(S, Vec<Tensor<S>>)>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>) -> Result<Var>,
{
    let mut g = Graph::new();
    g.bind_params(store, true)?;
    let loss = loss_fn(&mut g)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?;
    Ok((value, grads.params(&g)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(3.0).unwrap());
        let (loss, grads) = grad(&store, |g| {
            let wv = g.param(w);
            let sq = g.mul(wv, wv)?;
            g.sum(sq)
        })
        .unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(grads[0].data(), &[6.0]);
    }

    #[test]
    fn silu_gradient_at_zero_is_half() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(&[1], vec![0.0]).unwrap());
        let (_, grads) = grad(&store, |g| {
            let s = g.silu(g.param(w))?;
            g.sum(s)
        })
        .unwrap();
        assert_eq!(grads[0].data(), &[0.5]);
    }

    #[test]
    fn non_differentiable_op_is_reported() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(&[2], vec![0.3, 2.0]).unwrap());
        let err = grad(&store, |g| {
            let c = g.clamp(g.param(w), -1.0, 1.0)?;
            g.sum(c)
        })
        .unwrap_err();
        assert!(matches!(err, Error::UnsupportedOp("clamp")));
    }

    #[test]
    fn clamp_is_fine_without_gradient_flow() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(&[3], vec![-2.0, 0.5, 3.0]).unwrap()).unwrap();
        let c = g.clamp(x, -1.0, 1.0).unwrap();
        assert_eq!(g.value(c).data(), &[-1.0, 0.5, 1.0]);
    }

    #[test]
    fn shared_use_accumulates() {
        // f(w) = w*w + 3w  => f' = 2w + 3
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(1.5).unwrap());
        let (_, grads) = grad(&store, |g| {
            let wv = g.param(w);
            let a = g.mul(wv, wv)?;
            let b = g.scale(wv, 3.0)?;
            let s = g.add(a, b)?;
            g.sum(s)
        })
        .unwrap();
        assert!((grads[0].data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fault_hook_perturbs_gradients() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(2.0).unwrap());
        let mut g = Graph::new();
        g.bind_params(&store, true).unwrap();
        g.inject_fault(GradFault { op: "mul", factor: 2.0 });
        let wv = g.param(w);
        let m = g.mul(wv, wv).unwrap();
        let loss = g.sum(m).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.params(&g)[0].data(), &[8.0]);
    }
}
