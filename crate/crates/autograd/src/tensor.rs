//! Graph core, elementwise arithmetic, activations and full reductions.

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

/// Gradient callback: receives the output gradient and the parent handles.
type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &[Tensor])>;

pub(crate) struct Node {
    value: ArrayD<f64>,
    grad: RefCell<Option<ArrayD<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Differentiable array handle. Cloning shares the underlying node.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.value.shape())
            .field("requires_grad", &self.node.requires_grad)
            .finish_non_exhaustive()
    }
}

impl Tensor {
    /// Wraps a value that gradients should flow into (a trainable parameter).
    pub fn leaf(value: ArrayD<f64>) -> Self {
        Self::with_node(value, true, Vec::new(), None)
    }

    /// Wraps a value that never receives a gradient (inputs, targets, tables).
    pub fn constant(value: ArrayD<f64>) -> Self {
        Self::with_node(value, false, Vec::new(), None)
    }

    /// Zero-dimensional constant.
    pub fn scalar(v: f64) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    fn with_node(
        value: ArrayD<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Self {
        Tensor {
            node: Rc::new(Node {
                value,
                grad: RefCell::new(None),
                parents,
                backward,
                requires_grad,
            }),
        }
    }

    /// Builds an op result. The node only records history when some parent
    /// actually requires a gradient, so inference graphs stay flat and are
    /// freed as soon as intermediate handles go out of scope.
    pub(crate) fn from_op<F>(value: ArrayD<f64>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&ArrayD<f64>, &[Tensor]) + 'static,
    {
        if parents.iter().any(Tensor::requires_grad) {
            Self::with_node(value, true, parents, Some(Box::new(backward)))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.node.value
    }

    pub fn shape(&self) -> &[usize] {
        self.node.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Extracts the single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.node.value.len(), 1, "item: tensor is not a scalar");
        *self.node.value.iter().next().unwrap()
    }

    /// Gradient accumulated by the last `backward` call, if any.
    pub fn grad(&self) -> Option<ArrayD<f64>> {
        self.node.grad.borrow().clone()
    }

    /// Cuts the tape: same value, no history.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.node.value.clone())
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    pub(crate) fn accumulate(&self, contribution: ArrayD<f64>) {
        if !self.node.requires_grad {
            return;
        }
        debug_assert_eq!(contribution.shape(), self.shape(), "gradient shape mismatch");
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => *g += &contribution,
            None => *slot = Some(contribution),
        }
    }

    /// Backpropagates from a scalar output. Traversal follows the recorded
    /// parent order, never a hash iteration order, so gradient accumulation
    /// is reproducible bit for bit.
    pub fn backward(&self) {
        assert_eq!(
            self.node.value.len(),
            1,
            "backward: output must be a scalar"
        );
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        visited.insert(self.ptr_id());
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((t, i)) = stack.pop() {
            if i < t.node.parents.len() {
                let parent = t.node.parents[i].clone();
                stack.push((t, i + 1));
                if parent.node.requires_grad && visited.insert(parent.ptr_id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }
        self.accumulate(ArrayD::from_elem(self.node.value.raw_dim(), 1.0));
        for t in order.iter().rev() {
            let grad = t.node.grad.borrow().clone();
            if let (Some(g), Some(f)) = (grad, t.node.backward.as_ref()) {
                f(&g, &t.node.parents);
            }
        }
    }

    fn assert_same_shape(&self, rhs: &Tensor, op: &str) {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(),
            rhs.shape()
        );
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.assert_same_shape(rhs, "add");
        let value = &self.node.value + &rhs.node.value;
        Tensor::from_op(value, vec![self.clone(), rhs.clone()], |g, p| {
            p[0].accumulate(g.clone());
            p[1].accumulate(g.clone());
        })
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.assert_same_shape(rhs, "sub");
        let value = &self.node.value - &rhs.node.value;
        Tensor::from_op(value, vec![self.clone(), rhs.clone()], |g, p| {
            p[0].accumulate(g.clone());
            p[1].accumulate(-g);
        })
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.assert_same_shape(rhs, "mul");
        let value = &self.node.value * &rhs.node.value;
        Tensor::from_op(value, vec![self.clone(), rhs.clone()], |g, p| {
            p[0].accumulate(g * p[1].value());
            p[1].accumulate(g * p[0].value());
        })
    }

    pub fn div(&self, rhs: &Tensor) -> Tensor {
        self.assert_same_shape(rhs, "div");
        let value = &self.node.value / &rhs.node.value;
        Tensor::from_op(value, vec![self.clone(), rhs.clone()], |g, p| {
            let b = p[1].value();
            p[0].accumulate(g / b);
            p[1].accumulate(-(g * p[0].value()) / (b * b));
        })
    }

    pub fn neg(&self) -> Tensor {
        let value = -&self.node.value;
        Tensor::from_op(value, vec![self.clone()], |g, p| p[0].accumulate(-g))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let value = &self.node.value + c;
        Tensor::from_op(value, vec![self.clone()], |g, p| p[0].accumulate(g.clone()))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let value = &self.node.value * c;
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            p[0].accumulate(g * c)
        })
    }

    pub fn exp(&self) -> Tensor {
        let value = self.node.value.mapv(f64::exp);
        let y = value.clone();
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            p[0].accumulate(g * &y)
        })
    }

    pub fn ln(&self) -> Tensor {
        let value = self.node.value.mapv(f64::ln);
        Tensor::from_op(value, vec![self.clone()], |g, p| {
            p[0].accumulate(g / p[0].value())
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let value = self.node.value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let y = value.clone();
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            p[0].accumulate(g * &(&y * &(1.0 - &y)))
        })
    }

    pub fn tanh(&self) -> Tensor {
        let value = self.node.value.mapv(f64::tanh);
        let y = value.clone();
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            p[0].accumulate(g * &(1.0 - &y * &y))
        })
    }

    /// `x * sigmoid(x)`; smooth everywhere, which keeps finite-difference
    /// gradient checks honest where `relu` would sit on a kink.
    pub fn silu(&self) -> Tensor {
        let s = self.node.value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let value = &self.node.value * &s;
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let x = p[0].value();
            let d = &s * &(1.0 + x * &(1.0 - &s));
            p[0].accumulate(g * &d);
        })
    }

    pub fn relu(&self) -> Tensor {
        let value = self.node.value.mapv(|x| x.max(0.0));
        Tensor::from_op(value, vec![self.clone()], |g, p| {
            let mask = p[0].value().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            p[0].accumulate(g * &mask);
        })
    }

    /// Clamps to `[lo, hi]`; gradient is passed through strictly inside the
    /// interval and zeroed where the clamp is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        assert!(lo <= hi, "clamp: empty interval");
        let value = self.node.value.mapv(|x| x.clamp(lo, hi));
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let mask = p[0]
                .value()
                .mapv(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
            p[0].accumulate(g * &mask);
        })
    }

    /// Sum of all elements as a zero-dimensional tensor.
    pub fn sum_all(&self) -> Tensor {
        let value = ArrayD::from_elem(IxDyn(&[]), self.node.value.sum());
        Tensor::from_op(value, vec![self.clone()], |g, p| {
            let s = *g.iter().next().unwrap();
            p[0].accumulate(ArrayD::from_elem(p[0].value().raw_dim(), s));
        })
    }

    /// Mean of all elements as a zero-dimensional tensor.
    pub fn mean_all(&self) -> Tensor {
        let n = self.node.value.len() as f64;
        let value = ArrayD::from_elem(IxDyn(&[]), self.node.value.sum() / n);
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let s = *g.iter().next().unwrap() / n;
            p[0].accumulate(ArrayD::from_elem(p[0].value().raw_dim(), s));
        })
    }

    /// Elementwise mean over same-shaped tensors. Addends are summed in value
    /// order per element, so the result is bit-identical under any
    /// permutation of `parts`.
    pub fn mean_stack(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "mean_stack: need at least one tensor");
        let shape = parts[0].shape().to_vec();
        assert!(
            parts.iter().all(|p| p.shape() == shape),
            "mean_stack: shape mismatch"
        );
        let n = parts.len() as f64;
        let mut value = ArrayD::<f64>::zeros(IxDyn(&shape));
        let mut buf = vec![0.0f64; parts.len()];
        let mut cursors: Vec<_> = parts.iter().map(|p| p.value().iter()).collect();
        for v in value.iter_mut() {
            for (b, it) in buf.iter_mut().zip(&mut cursors) {
                *b = *it.next().expect("all tensors have equal length");
            }
            buf.sort_by(|a, b| a.total_cmp(b));
            *v = buf.iter().sum::<f64>() / n;
        }
        Tensor::from_op(value, parts.to_vec(), move |g, ps| {
            let share = g.mapv(|x| x / n);
            for p in ps {
                p.accumulate(share.clone());
            }
        })
    }
}
