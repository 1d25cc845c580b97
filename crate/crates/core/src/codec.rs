//! Mapping between pixel-level binary masks and the latent grid consumed by
//! the diffusion chain.
//!
//! Encoding area-averages each 4x4 block and rescales [0,1] to [-b, +b];
//! decoding inverts the affine map, clamps, and bilinearly resizes to the
//! requested resolution. At the latent grid the round trip is exactly
//! invertible for binary masks; after bilinear upsampling, block-constant
//! masks survive except at exposed block corners, where the separable kernel
//! dips below threshold (see `corner_pixels_are_the_bilinear_blind_spot`).

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayD, IxDyn};

/// Spatial reduction factor between mask and latent resolution.
pub const LATENT_STRIDE: usize = 4;

/// Area-downsamples a binary mask by 4x and maps [0,1] affinely to [-b, +b],
/// producing a `1 x H/4 x W/4` latent.
pub fn encode_mask(mask: &Array2<f64>, scale_b: f64) -> Result<ArrayD<f64>> {
    if scale_b <= 0.0 {
        return Err(Error::Config(format!("codec scale {scale_b} must be positive")));
    }
    let (h, w) = mask.dim();
    if h % LATENT_STRIDE != 0 || w % LATENT_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "mask {h}x{w} not divisible by {LATENT_STRIDE}"
        )));
    }
    if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("mask is not binary".into()));
    }
    let (lh, lw) = (h / LATENT_STRIDE, w / LATENT_STRIDE);
    let mut z = ArrayD::<f64>::zeros(IxDyn(&[1, lh, lw]));
    let norm = 1.0 / (LATENT_STRIDE * LATENT_STRIDE) as f64;
    for y in 0..lh {
        for x in 0..lw {
            let mut acc = 0.0;
            for dy in 0..LATENT_STRIDE {
                for dx in 0..LATENT_STRIDE {
                    acc += mask[(y * LATENT_STRIDE + dy, x * LATENT_STRIDE + dx)];
                }
            }
            z[[0, y, x]] = (2.0 * acc * norm - 1.0) * scale_b;
        }
    }
    Ok(z)
}

/// Inverts the affine map, clamps to [0,1] and bilinearly resizes the latent
/// to `out_h x out_w`, yielding a probability map.
pub fn decode_pred(
    z0_hat: &ArrayD<f64>,
    scale_b: f64,
    out_h: usize,
    out_w: usize,
) -> Result<Array2<f64>> {
    if scale_b <= 0.0 {
        return Err(Error::Config(format!("codec scale {scale_b} must be positive")));
    }
    if z0_hat.ndim() != 3 || z0_hat.shape()[0] != 1 {
        return Err(Error::Shape(format!(
            "latent must be 1xhxw, got {:?}",
            z0_hat.shape()
        )));
    }
    if z0_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite latent in decode_pred".into()));
    }
    let (lh, lw) = (z0_hat.shape()[1], z0_hat.shape()[2]);
    let mut prob = Array2::<f64>::zeros((lh, lw));
    for y in 0..lh {
        for x in 0..lw {
            prob[(y, x)] = ((z0_hat[[0, y, x]] + scale_b) / (2.0 * scale_b)).clamp(0.0, 1.0);
        }
    }
    Ok(bilinear_resize(&prob, out_h, out_w))
}

/// Thresholds a probability map; ties (`prob == threshold`) go to foreground.
pub fn binarize(prob: &Array2<f64>, threshold: f64) -> Array2<f64> {
    prob.mapv(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Bilinear resize with half-pixel sampling (`align_corners = false`).
pub fn bilinear_resize(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let table = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64).clamp(0.0, 1.0))
            })
            .collect()
    };
    let ty = table(h, out_h);
    let tx = table(w, out_w);
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let top = (1.0 - wx) * src[(y0, x0)] + wx * src[(y0, x1)];
            let bot = (1.0 - wx) * src[(y1, x0)] + wx * src[(y1, x1)];
            out[(oy, ox)] = (1.0 - wy) * top + wy * bot;
        }
    }
    out
}
