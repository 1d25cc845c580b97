//! Deterministic reverse-chain inference.
//!
//! The spatiotemporal prior of a clip is encoded once; each mask sample then
//! starts from seeded Gaussian noise and walks the planned timesteps with the
//! variance-zero reverse update. Mask probabilities come from the head output
//! of the final planned step; drawing several samples averages their
//! probability maps.

use ndarray::{Array2, ArrayD, Ix2};
use rand_chacha::ChaCha8Rng;
use vseg_autograd::Tensor;

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::nets::{denoise_head, fuse_prior, image_encode, temporal_encode, Pyramid};
use crate::params::{Binder, ParamMap};
use crate::schedule::{
    make_step_schedule, reverse_step, sample_noise, NoiseSchedule, StepSchedule,
};

use super::TrainConfig;

/// Walks the reverse chain from `z_init`. Each planned timestep calls
/// `denoise`, which maps `(z_t, t)` to the clean-latent estimate and the mask
/// probabilities predicted at that step; `reverse_step` then carries the
/// latent to the next planned timestep (and to the clean estimate at the
/// final one). Returns the final latent and the last step's mask.
pub fn reverse_chain<F>(
    schedule: &NoiseSchedule,
    plan: &StepSchedule,
    z_init: ArrayD<f64>,
    mut denoise: F,
) -> Result<(ArrayD<f64>, Array2<f64>)>
where
    F: FnMut(&ArrayD<f64>, usize) -> Result<(ArrayD<f64>, Array2<f64>)>,
{
    let steps = plan.steps();
    let mut z = z_init;
    let mut mask: Option<Array2<f64>> = None;
    for (i, &t) in steps.iter().enumerate() {
        let (z0_hat, m) = denoise(&z, t)?;
        z = reverse_step(&z, &z0_hat, t, steps.get(i + 1).copied(), schedule)?;
        mask = Some(m);
    }
    match mask {
        Some(m) => Ok((z, m)),
        None => Err(Error::Config("reverse plan is empty".into())),
    }
}

/// Segments one clip: encodes the fused prior once, then averages the mask
/// probabilities of `samples` independent reverse chains with `steps` jumps
/// each. All randomness comes from `rng`.
pub fn infer_clip(
    params: &ParamMap,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    clip: &VideoClip,
    steps: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    if samples == 0 {
        return Err(Error::Config("need at least one mask sample".into()));
    }
    let b = Binder::frozen(params);
    let target = Tensor::constant(clip.target.clone());
    let spatial = image_encode(&target, &b, &cfg.model)?;
    let temporal = if cfg.trm_on {
        let prev: Vec<Tensor> = clip
            .prev
            .iter()
            .map(|f| Tensor::constant(f.clone()))
            .collect();
        temporal_encode(&prev, &b, &cfg.model)?
    } else {
        Pyramid::zeros(&cfg.model)
    };
    let fused = fuse_prior(&spatial, &temporal, &b, &cfg.model)?;
    let plan = make_step_schedule(cfg.model.timesteps, steps)?;
    let (lh, lw) = cfg.model.latent_shape();

    let mut acc: Option<Array2<f64>> = None;
    for _ in 0..samples {
        let z_init = sample_noise(&[1, lh, lw], rng);
        let (_, mask) = reverse_chain(schedule, &plan, z_init, |z, t| {
            let (z0_hat, pred) =
                denoise_head(&Tensor::constant(z.clone()), &fused, t, &b, &cfg.model)?;
            let prob = pred
                .mask_logits
                .sigmoid()
                .value()
                .clone()
                .into_dimensionality::<Ix2>()
                .expect("mask logits are 2-D");
            Ok((z0_hat.value().clone(), prob))
        })?;
        acc = Some(match acc {
            Some(a) => a + &mask,
            None => mask,
        });
    }
    Ok(acc.expect("at least one sample").mapv(|v| v / samples as f64))
}
