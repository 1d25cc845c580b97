//! Spatial ops on `[c, h, w]` maps: convolution, pooling and resizing.

use crate::shape::to_std;
use crate::Tensor;
use ndarray::{Array2, ArrayD, Ix3, IxDyn};

/// Unfolds `[ci, h, w]` into a `[ci*kh*kw, ho*wo]` patch matrix; out-of-bounds
/// taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &ArrayD<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let xv = x.view().into_dimensionality::<Ix3>().unwrap();
    let (ci, h, w) = xv.dim();
    let mut cols = Array2::<f64>::zeros((ci * kh * kw, ho * wo));
    let mut row = 0;
    for c in 0..ci {
        for di in 0..kh {
            for dj in 0..kw {
                for oy in 0..ho {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cols[(row, oy * wo + ox)] = xv[(c, iy as usize, ix as usize)];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Array2<f64>,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> ArrayD<f64> {
    let mut dx = ArrayD::<f64>::zeros(IxDyn(&[ci, h, w]));
    let mut dxv = dx.view_mut().into_dimensionality::<Ix3>().unwrap();
    let mut row = 0;
    for c in 0..ci {
        for di in 0..kh {
            for dj in 0..kw {
                for oy in 0..ho {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dxv[(c, iy as usize, ix as usize)] += dcols[(row, oy * wo + ox)];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Reshapes a matrix product into `dims`, copying when the product came out
/// in a non-row-major layout (ndarray does this for degenerate inner dims).
fn reshape_dyn(a: Array2<f64>, dims: &[usize]) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a.into_shape_with_order(IxDyn(dims))
            .expect("reshape_dyn: element count mismatch")
    } else {
        let data: Vec<f64> = a.iter().copied().collect();
        ArrayD::from_shape_vec(IxDyn(dims), data).expect("reshape_dyn: element count mismatch")
    }
}

/// Per-axis bilinear sampling table with half-pixel centers: each output
/// index reads `in0` with weight `1 - frac` and `in1` with weight `frac`.
fn bilinear_table(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (s - i0 as f64).clamp(0.0, 1.0))
        })
        .collect()
}

impl Tensor {
    /// 2-D convolution of `[ci, h, w]` with `[co, ci, kh, kw]` weights,
    /// implemented as im2col + matrix product; the patch matrix is cached for
    /// the weight gradient.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert_eq!(self.shape().len(), 3, "conv2d: input must be [ci,h,w]");
        assert_eq!(weight.shape().len(), 4, "conv2d: weight must be [co,ci,kh,kw]");
        assert_eq!(
            self.shape()[0],
            weight.shape()[1],
            "conv2d: channel mismatch"
        );
        assert!(stride >= 1, "conv2d: stride must be positive");
        let (ci, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (co, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
        assert!(
            h + 2 * pad >= kh && w + 2 * pad >= kw,
            "conv2d: kernel larger than padded input"
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;

        let cols = im2col(self.value(), kh, kw, stride, pad, ho, wo);
        let wmat = to_std(weight.value())
            .into_shape_with_order((co, ci * kh * kw))
            .unwrap();
        let value = reshape_dyn(wmat.dot(&cols), &[co, ho, wo]);

        Tensor::from_op(value, vec![self.clone(), weight.clone()], move |g, p| {
            let gmat = to_std(g)
                .into_shape_with_order((co, ho * wo))
                .unwrap();
            let dw = reshape_dyn(gmat.dot(&cols.t()), &[co, ci, kh, kw]);
            let wmat = to_std(p[1].value())
                .into_shape_with_order((co, ci * kh * kw))
                .unwrap();
            let dcols = wmat.t().dot(&gmat);
            p[0].accumulate(col2im(&dcols, ci, h, w, kh, kw, stride, pad, ho, wo));
            p[1].accumulate(dw);
        })
    }

    /// Non-overlapping `k x k` mean pooling; spatial extents must divide by `k`.
    pub fn avg_pool2d(&self, k: usize) -> Tensor {
        assert_eq!(self.shape().len(), 3, "avg_pool2d: input must be [c,h,w]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert!(
            k >= 1 && h % k == 0 && w % k == 0,
            "avg_pool2d: window {k} must divide {h}x{w}"
        );
        let (ho, wo) = (h / k, w / k);
        let xv = self.value().view().into_dimensionality::<Ix3>().unwrap();
        let mut value = ArrayD::<f64>::zeros(IxDyn(&[c, ho, wo]));
        {
            let mut yv = value.view_mut().into_dimensionality::<Ix3>().unwrap();
            let norm = 1.0 / (k * k) as f64;
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += xv[(ch, oy * k + dy, ox * k + dx)];
                            }
                        }
                        yv[(ch, oy, ox)] = acc * norm;
                    }
                }
            }
        }
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let gv = g.view().into_dimensionality::<Ix3>().unwrap();
            let mut dx = ArrayD::<f64>::zeros(IxDyn(&[c, h, w]));
            {
                let mut dxv = dx.view_mut().into_dimensionality::<Ix3>().unwrap();
                let norm = 1.0 / (k * k) as f64;
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gval = gv[(ch, oy, ox)] * norm;
                            for dy in 0..k {
                                for dx2 in 0..k {
                                    dxv[(ch, oy * k + dy, ox * k + dx2)] += gval;
                                }
                            }
                        }
                    }
                }
            }
            p[0].accumulate(dx);
        })
    }

    /// Bilinear resize of `[c, h, w]` to `[c, oh, ow]` with half-pixel
    /// alignment (`align_corners = false`).
    pub fn upsample_bilinear(&self, oh: usize, ow: usize) -> Tensor {
        assert_eq!(self.shape().len(), 3, "upsample_bilinear: input must be [c,h,w]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let ty = bilinear_table(h, oh);
        let tx = bilinear_table(w, ow);
        let xv = self.value().view().into_dimensionality::<Ix3>().unwrap();
        let mut value = ArrayD::<f64>::zeros(IxDyn(&[c, oh, ow]));
        {
            let mut yv = value.view_mut().into_dimensionality::<Ix3>().unwrap();
            for ch in 0..c {
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let top = (1.0 - wx) * xv[(ch, y0, x0)] + wx * xv[(ch, y0, x1)];
                        let bot = (1.0 - wx) * xv[(ch, y1, x0)] + wx * xv[(ch, y1, x1)];
                        yv[(ch, oy, ox)] = (1.0 - wy) * top + wy * bot;
                    }
                }
            }
        }
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let gv = g.view().into_dimensionality::<Ix3>().unwrap();
            let mut dx = ArrayD::<f64>::zeros(IxDyn(&[c, h, w]));
            {
                let mut dxv = dx.view_mut().into_dimensionality::<Ix3>().unwrap();
                for ch in 0..c {
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let gval = gv[(ch, oy, ox)];
                            dxv[(ch, y0, x0)] += (1.0 - wy) * (1.0 - wx) * gval;
                            dxv[(ch, y0, x1)] += (1.0 - wy) * wx * gval;
                            dxv[(ch, y1, x0)] += wy * (1.0 - wx) * gval;
                            dxv[(ch, y1, x1)] += wy * wx * gval;
                        }
                    }
                }
            }
            p[0].accumulate(dx);
        })
    }

    /// Mean over the spatial extent of `[c, h, w]`, yielding `[c]`.
    pub fn global_avg_pool(&self) -> Tensor {
        assert_eq!(self.shape().len(), 3, "global_avg_pool: input must be [c,h,w]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let xv = self.value().view().into_dimensionality::<Ix3>().unwrap();
        let norm = 1.0 / (h * w) as f64;
        let mut value = ArrayD::<f64>::zeros(IxDyn(&[c]));
        for ch in 0..c {
            value[[ch]] = xv.index_axis(ndarray::Axis(0), ch).sum() * norm;
        }
        Tensor::from_op(value, vec![self.clone()], move |g, p| {
            let mut dx = ArrayD::<f64>::zeros(IxDyn(&[c, h, w]));
            {
                let mut dxv = dx.view_mut().into_dimensionality::<Ix3>().unwrap();
                for ch in 0..c {
                    let gval = g[[ch]] * norm;
                    dxv.index_axis_mut(ndarray::Axis(0), ch).fill(gval);
                }
            }
            p[0].accumulate(dx);
        })
    }
}
