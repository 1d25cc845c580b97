//! Reconstruction decoder: predicts the target frame from the temporal
//! pyramid alone, giving the adversarial branch something to judge.

use super::{conv, ModelConfig, Pyramid};
use crate::error::Result;
use crate::params::Binder;
use vseg_autograd::Tensor;

/// Decodes the temporal pyramid into a `[3, H, W]` frame in [-1, 1].
pub fn reconstruct(r: &Pyramid, b: &Binder, cfg: &ModelConfig) -> Result<Tensor> {
    r.check(cfg)?;
    let (lh, lw) = cfg.latent_shape();
    let mut summed: Option<Tensor> = None;
    for j in 0..4 {
        let unified = conv(b, &format!("recon_decoder.unify{}", j + 1), &r.levels[j], 1, 0)
            .silu()
            .upsample_bilinear(lh, lw);
        summed = Some(match summed {
            Some(acc) => acc.add(&unified),
            None => unified,
        });
    }
    let feature = conv(b, "recon_decoder.fuse", &summed.expect("four levels"), 1, 1).silu();
    Ok(conv(b, "recon_decoder.out", &feature, 1, 0)
        .upsample_bilinear(cfg.height, cfg.width)
        .tanh())
}
