//! Denoising head: conditions the noisy latent on the fused pyramid and a
//! sinusoidal timestep embedding, and emits the denoised latent plus the
//! multi-task predictions.

use super::{conv, linear, ModelConfig, MultiTaskPrediction, Pyramid};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::params::Binder;
use ndarray::{ArrayD, IxDyn};
use vseg_autograd::Tensor;

/// Standard sinusoidal embedding of an integer timestep: the first half holds
/// sines, the second half cosines, over geometrically spaced frequencies.
pub fn sinusoidal_time_embedding(t: usize, dim: usize) -> ArrayD<f64> {
    let half = dim / 2;
    let mut e = ArrayD::<f64>::zeros(IxDyn(&[dim]));
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        e[[i]] = arg.sin();
        e[[half + i]] = arg.cos();
    }
    e
}

/// Runs the denoising head.
///
/// The latent is resized to every pyramid level and channel-concatenated with
/// it; a 1x1 convolution unifies each level to a common width, the timestep
/// embedding is added channel-wise, and the unified maps are upsampled to
/// quarter resolution and summed. A 3x3 fusion layer then feeds four outputs:
/// the denoised latent, the full-resolution mask logits, the class scores and
/// the squashed box.
pub fn denoise_head(
    z_t: &Tensor,
    fused: &Pyramid,
    t: usize,
    b: &Binder,
    cfg: &ModelConfig,
) -> Result<(Tensor, MultiTaskPrediction)> {
    fused.check(cfg)?;
    let (lh, lw) = cfg.latent_shape();
    if z_t.shape() != [1, lh, lw] {
        return Err(Error::Shape(format!(
            "latent has shape {:?}, expected [1, {lh}, {lw}]",
            z_t.shape()
        )));
    }
    if t >= cfg.timesteps {
        return Err(Error::Index(format!(
            "timestep {t} out of range 0..{}",
            cfg.timesteps
        )));
    }

    let du = cfg.channels[0];
    let emb = Tensor::constant(sinusoidal_time_embedding(t, cfg.time_embed_dim))
        .reshape(&[1, cfg.time_embed_dim]);
    let tvec = linear(b, "denoise_head.time.fc2", &linear(b, "denoise_head.time.fc1", &emb).silu())
        .reshape(&[du]);

    let mut summed: Option<Tensor> = None;
    for j in 0..4 {
        let (_, hj, wj) = cfg.level_shape(j);
        let cat = Tensor::concat(
            0,
            &[fused.levels[j].clone(), z_t.upsample_bilinear(hj, wj)],
        );
        let unified = conv(b, &format!("denoise_head.unify{}", j + 1), &cat, 1, 0)
            .add_bias_channel(&tvec)
            .silu()
            .upsample_bilinear(lh, lw);
        summed = Some(match summed {
            Some(acc) => acc.add(&unified),
            None => unified,
        });
    }
    let feature = conv(b, "denoise_head.fuse", &summed.expect("four levels"), 1, 1).silu();

    let z0_hat = conv(b, "denoise_head.z0", &feature, 1, 0);
    let mask_logits = conv(b, "denoise_head.mask", &feature, 1, 0)
        .upsample_bilinear(cfg.height, cfg.width)
        .reshape(&[cfg.height, cfg.width]);
    let pooled = feature.global_avg_pool().reshape(&[1, du]);
    let cls_logits = linear(b, "denoise_head.cls", &pooled).reshape(&[NUM_CLASSES]);
    let box_pred = linear(b, "denoise_head.box", &pooled).sigmoid().reshape(&[4]);

    Ok((
        z0_hat,
        MultiTaskPrediction {
            mask_logits,
            cls_logits,
            box_pred,
        },
    ))
}
