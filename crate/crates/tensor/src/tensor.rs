//! The [`Tensor`] handle and the reverse-mode backward pass.
//!
//! A tensor produced by a differentiable op keeps its inputs alive through
//! a boxed [`GradFn`]. Calling [`Tensor::backward`] on a scalar walks that
//! graph once in reverse topological order and leaves a gradient on every
//! reachable tensor that requires one.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{arg_err, shape_err, Result, TensorError};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled. Tensors created inside never
/// require grad, so nothing computed there can receive gradient.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of one recorded operation.
pub(crate) trait GradFn {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<&Tensor>;
    /// Gradients for each input, in `inputs()` order. `None` means the op
    /// contributes nothing to that input.
    fn backward(&self, out_grad: &[f32], out: &[f32]) -> Vec<Option<Vec<f32>>>;
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn>>,
    backward_done: Cell<bool>,
}

/// Dense row-major f32 array. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
            backward_done: Cell::new(false),
        }))
    }

    /// Wraps `data` as a constant (non-differentiable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Self::check(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Wraps `data` as a trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Self::check(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    fn check(shape: &[usize], data: &[f32]) -> Result<()> {
        if shape.iter().any(|&d| d == 0) {
            return Err(arg_err("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(())
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Tensor {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Output of a differentiable op. Records `grad_fn` only when grad
    /// mode is on and some input requires grad.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, grad_fn: impl GradFn + 'static) -> Tensor {
        let track = grad_enabled() && grad_fn.inputs().iter().any(|t| t.requires_grad());
        if track {
            Self::build(shape, data, true, Some(Box::new(grad_fn)))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    /// Mutable access to storage, for optimizers, initializers and loaders.
    /// Mutating a tensor that a live graph saved invalidates that graph.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values as a constant tensor outside any graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Identity of the underlying storage.
    pub fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|f| f.name())
    }

    /// Back-propagates from this scalar. Gradients accumulate on leaves
    /// until [`Tensor::zero_grad`]; a graph can be walked only once.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if self.0.backward_done.get() {
            return Err(TensorError::BackwardAlreadyRun);
        }
        if !self.requires_grad() {
            return Err(TensorError::NoGradientPath);
        }

        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(f) = &node.0.grad_fn {
                let input_grads = {
                    let out = node.0.data.borrow();
                    f.backward(&grad, &out)
                };
                for (input, g) in f.inputs().into_iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(g.len(), input.numel(), "grad length from {}", f.name());
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), g);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                None => *slot = Some(grad),
            }
        }
        self.0.backward_done.set(true);
        Ok(())
    }

    /// Post-order DFS over the recorded graph, iterative to avoid deep
    /// recursion on long chains.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(f) = &node.0.grad_fn {
                for input in f.inputs().into_iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[0, 3], vec![]).is_err());
        assert_eq!(Tensor::scalar(2.0).numel(), 1);
    }

    #[test]
    fn no_grad_restores_mode() {
        assert!(grad_enabled());
        no_grad(|| assert!(!grad_enabled()));
        assert!(grad_enabled());
    }
}
