//! Shape manipulation, matrix products and bias additions.

use crate::Tensor;
use ndarray::{concatenate, ArrayD, Axis, Ix2, IxDyn, Slice};

/// Owned copy in standard (row-major, contiguous) layout.
pub(crate) fn to_std(a: &ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a.clone()
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn reshaped(a: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    to_std(a)
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape: element count mismatch")
}

impl Tensor {
    /// Reinterprets the element buffer under a new shape (same length).
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let value = reshaped(self.value(), shape);
        Tensor::from_op(value, vec![self.clone()], |g, p| {
            p[0].accumulate(reshaped(g, p[0].shape()));
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2d(&self) -> Tensor {
        assert_eq!(self.shape().len(), 2, "transpose2d: rank-2 input required");
        let value = to_std(&self.value().clone().reversed_axes());
        Tensor::from_op(value, vec![self.clone()], |g, p| {
            p[0].accumulate(to_std(&g.clone().reversed_axes()));
        })
    }

    /// Contiguous slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(
            start + len <= self.shape()[axis],
            "narrow: range {}..{} exceeds axis {} of extent {}",
            start,
            start + len,
            axis,
            self.shape()[axis]
        );
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let mut dx = ArrayD::<f64>::zeros(p[0].value().raw_dim());
            dx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            p[0].accumulate(dx);
        })
    }

    /// Concatenates tensors of otherwise identical shape along `axis`.
    pub fn concat(axis: usize, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat: no inputs");
        let views: Vec<_> = parts.iter().map(|t| t.value().view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let parents: Vec<Tensor> = parts.to_vec();
        Tensor::from_op(value, parents, move |g, p| {
            let mut offset = 0;
            for t in p {
                let extent = t.shape()[axis];
                let piece = g
                    .slice_axis(Axis(axis), Slice::from(offset..offset + extent))
                    .to_owned();
                t.accumulate(piece);
                offset += extent;
            }
        })
    }

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 2, "matmul: lhs must be rank 2");
        assert_eq!(rhs.shape().len(), 2, "matmul: rhs must be rank 2");
        assert_eq!(
            self.shape()[1],
            rhs.shape()[0],
            "matmul: inner dimensions differ"
        );
        let a = self.value().view().into_dimensionality::<Ix2>().unwrap();
        let b = rhs.value().view().into_dimensionality::<Ix2>().unwrap();
        let value = a.dot(&b).into_dyn();
        Tensor::from_op(value, vec![self.clone(), rhs.clone()], |g, p| {
            let a = p[0].value().view().into_dimensionality::<Ix2>().unwrap();
            let b = p[1].value().view().into_dimensionality::<Ix2>().unwrap();
            let gm = g.view().into_dimensionality::<Ix2>().unwrap();
            p[0].accumulate(gm.dot(&b.t()).into_dyn());
            p[1].accumulate(a.t().dot(&gm).into_dyn());
        })
    }

    /// Adds a per-channel offset `[c]` to a `[c, h, w]` map.
    pub fn add_bias_channel(&self, bias: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 3, "add_bias_channel: map must be [c,h,w]");
        assert_eq!(bias.shape(), [self.shape()[0]], "add_bias_channel: bias extent");
        let mut value = self.value().clone();
        for (c, b) in bias.value().iter().enumerate() {
            value.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + b);
        }
        Tensor::from_op(value, vec![self.clone(), bias.clone()], |g, p| {
            p[0].accumulate(g.clone());
            let channels = p[1].value().len();
            let mut db = ArrayD::<f64>::zeros(IxDyn(&[channels]));
            for c in 0..channels {
                db[[c]] = g.index_axis(Axis(0), c).sum();
            }
            p[1].accumulate(db);
        })
    }

    /// Adds a per-column offset `[c]` to every row of `[n, c]`.
    pub fn add_bias_row(&self, bias: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 2, "add_bias_row: input must be [n,c]");
        assert_eq!(bias.shape(), [self.shape()[1]], "add_bias_row: bias extent");
        let rows = self.shape()[0];
        let cols = self.shape()[1];
        let bview = bias.value().view();
        let broadcast = bview
            .broadcast(IxDyn(&[rows, cols]))
            .expect("add_bias_row: broadcast");
        let value = self.value() + &broadcast;
        Tensor::from_op(value, vec![self.clone(), bias.clone()], |g, p| {
            p[0].accumulate(g.clone());
            p[1].accumulate(g.sum_axis(Axis(0)));
        })
    }
}
