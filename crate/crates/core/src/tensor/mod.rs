//! Dense `f64` tensors with a reverse-mode autodiff graph.
//!
//! A [`Tensor`] is a cheap, reference-counted handle. Values are immutable once built;
//! only the gradient buffer changes. Every operation that has at least one parent with
//! `requires_grad` records its parents and a backward closure, and [`Tensor::backward`]
//! replays those closures in reverse topological order.
//!
//! Gradients of leaves accumulate across `backward` calls until [`Tensor::zero_grad`].
//! Gradients of interior nodes are consumed during propagation, so running `backward`
//! twice on the same graph adds the same contribution twice to each leaf.
//!
//! The graph uses `Rc`, so it is confined to the thread that built it. Independent models
//! can run on separate threads.

mod conv;
mod gradcheck;
mod linalg;
mod ops;

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub(crate) use linalg::gemm;

/// Inputs handed to a backward closure.
pub(crate) struct GradCtx<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a [f64],
    /// This node's forward output.
    pub out: &'a [f64],
    pub parents: &'a [Tensor],
}

/// Returns one optional gradient per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn Fn(&GradCtx<'_>) -> Vec<Option<Vec<f64>>>>;

enum Backward {
    Dense(BackwardFn),
    /// Contiguous window of the single parent viewed as `(outer, len, inner)`: the
    /// gradient is added in place instead of materialising a parent-sized buffer.
    Window {
        len: usize,
        inner: usize,
        start: usize,
        width: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<Backward>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Constant tensor (does not participate in gradients).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked(shape, data, false)
    }

    /// Leaf tensor that collects gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked(shape, data, true)
    }

    fn checked(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::raw(shape.to_vec(), data, requires_grad))
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::raw(vec![1], vec![value], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::raw(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::raw(shape.to_vec(), vec![value; numel(shape)], false)
    }

    /// Builds the result of an operation. The backward closure and the parent links are
    /// only kept when some parent needs a gradient.
    pub(crate) fn from_op<F>(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&GradCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len());
        if parents.iter().any(Tensor::requires_grad) {
            Tensor(Rc::new(Node {
                shape,
                data,
                requires_grad: true,
                grad: RefCell::new(None),
                parents,
                backward: Some(Backward::Dense(Box::new(backward))),
            }))
        } else {
            Self::raw(shape, data, false)
        }
    }

    /// Result of slicing `parent` along an axis seen as `(outer, len, inner)`.
    pub(crate) fn from_window(
        shape: Vec<usize>,
        data: Vec<f64>,
        parent: &Tensor,
        len: usize,
        inner: usize,
        start: usize,
    ) -> Tensor {
        if !parent.requires_grad() {
            return Self::raw(shape, data, false);
        }
        let width = data.len() / (parent.numel() / (len * inner)).max(1);
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad: true,
            grad: RefCell::new(None),
            parents: vec![parent.clone()],
            backward: Some(Backward::Window {
                len,
                inner,
                start,
                width,
            }),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
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

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.shape.clone(), self.0.data.clone(), false)
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate(vec![1.0]);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(grad) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let backward = match backward {
                Backward::Dense(f) => f,
                &Backward::Window {
                    len,
                    inner,
                    start,
                    width,
                } => {
                    let parent = &node.0.parents[0];
                    let mut slot = parent.0.grad.borrow_mut();
                    let acc = slot.get_or_insert_with(|| vec![0.0; parent.numel()]);
                    for (o, g) in grad.chunks_exact(width).enumerate() {
                        let s = (o * len + start) * inner;
                        acc[s..s + width]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(a, b)| *a += b);
                    }
                    continue;
                }
            };
            let ctx = GradCtx {
                grad: &grad,
                out: &node.0.data,
                parents: &node.0.parents,
            };
            let grads = backward(&ctx);
            for (parent, g) in node.0.parents.iter().zip(grads) {
                if let Some(g) = g {
                    if parent.requires_grad() {
                        debug_assert_eq!(g.len(), parent.numel());
                        parent.accumulate(g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.ptr()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.parents.iter().rev() {
                if p.requires_grad() && !seen.contains(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn independent_loss_leaves_grad_empty() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let loss = c.sum();
        loss.backward().unwrap();
        assert!(w.grad().unwrap_or(vec![0.0, 0.0]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![4.0, 8.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn shared_subexpression_sums_paths() {
        // y = x*x + x, dy/dx = 2x + 1
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(w.backward(), Err(Error::NotScalar(_))));
    }

    #[test]
    fn constructor_checks_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }
}
