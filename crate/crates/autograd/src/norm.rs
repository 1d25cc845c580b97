//! Row-wise normalization and softmax ops used by the attention blocks.

use crate::Tensor;
use ndarray::{Array2, ArrayD, Ix1, Ix2, IxDyn};

impl Tensor {
    /// Layer normalization over the last axis of `[n, c]` with per-feature
    /// scale and shift; variance is the biased estimate.
    pub fn layer_norm_rows(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
        assert_eq!(self.shape().len(), 2, "layer_norm_rows: input must be [n,c]");
        let (n, c) = (self.shape()[0], self.shape()[1]);
        assert_eq!(gamma.shape(), [c], "layer_norm_rows: gamma extent");
        assert_eq!(beta.shape(), [c], "layer_norm_rows: beta extent");
        let x = self.value().view().into_dimensionality::<Ix2>().unwrap();
        let gv = gamma.value().view().into_dimensionality::<Ix1>().unwrap();
        let bv = beta.value().view().into_dimensionality::<Ix1>().unwrap();

        let mut xhat = Array2::<f64>::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        let mut value = ArrayD::<f64>::zeros(IxDyn(&[n, c]));
        {
            let mut yv = value.view_mut().into_dimensionality::<Ix2>().unwrap();
            for i in 0..n {
                let row = x.row(i);
                let mu = row.mean().unwrap();
                let var = row.mapv(|v| (v - mu) * (v - mu)).mean().unwrap();
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for j in 0..c {
                    let xh = (row[j] - mu) * is;
                    xhat[(i, j)] = xh;
                    yv[(i, j)] = gv[j] * xh + bv[j];
                }
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, p| {
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                let gammav = p[1].value().view().into_dimensionality::<Ix1>().unwrap();
                let mut dgamma = ArrayD::<f64>::zeros(IxDyn(&[c]));
                let mut dbeta = ArrayD::<f64>::zeros(IxDyn(&[c]));
                let mut dx = ArrayD::<f64>::zeros(IxDyn(&[n, c]));
                {
                    let mut dxv = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for i in 0..n {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let go = gm[(i, j)];
                            dgamma[[j]] += go * xhat[(i, j)];
                            dbeta[[j]] += go;
                            let dxh = go * gammav[j];
                            m1 += dxh;
                            m2 += dxh * xhat[(i, j)];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let dxh = gm[(i, j)] * gammav[j];
                            dxv[(i, j)] = inv_std[i] * (dxh - m1 - xhat[(i, j)] * m2);
                        }
                    }
                }
                p[0].accumulate(dx);
                p[1].accumulate(dgamma);
                p[2].accumulate(dbeta);
            },
        )
    }

    /// Numerically stable softmax over each row of `[n, c]`.
    pub fn softmax_rows(&self) -> Tensor {
        assert_eq!(self.shape().len(), 2, "softmax_rows: input must be [n,c]");
        let (n, c) = (self.shape()[0], self.shape()[1]);
        let x = self.value().view().into_dimensionality::<Ix2>().unwrap();
        let mut value = ArrayD::<f64>::zeros(IxDyn(&[n, c]));
        {
            let mut yv = value.view_mut().into_dimensionality::<Ix2>().unwrap();
            for i in 0..n {
                let row = x.row(i);
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut z = 0.0;
                for j in 0..c {
                    let e = (row[j] - m).exp();
                    yv[(i, j)] = e;
                    z += e;
                }
                for j in 0..c {
                    yv[(i, j)] /= z;
                }
            }
        }
        let y = value.clone();
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let gm = g.view().into_dimensionality::<Ix2>().unwrap();
            let yv = y.view().into_dimensionality::<Ix2>().unwrap();
            let mut dx = ArrayD::<f64>::zeros(IxDyn(&[n, c]));
            {
                let mut dxv = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += gm[(i, j)] * yv[(i, j)];
                    }
                    for j in 0..c {
                        dxv[(i, j)] = yv[(i, j)] * (gm[(i, j)] - dot);
                    }
                }
            }
            p[0].accumulate(dx);
        })
    }

    /// Stable `log(softmax(x))` of a rank-1 tensor.
    pub fn log_softmax_1d(&self) -> Tensor {
        assert_eq!(self.shape().len(), 1, "log_softmax_1d: input must be [k]");
        let x = self.value();
        let m = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + x.mapv(|v| (v - m).exp()).sum().ln();
        let value = x.mapv(|v| v - lse);
        let soft = value.mapv(f64::exp);
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let gsum = g.sum();
            p[0].accumulate(g - &(&soft * gsum));
        })
    }
}
