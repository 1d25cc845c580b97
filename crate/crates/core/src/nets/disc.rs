//! Discriminator: a small strided convolutional classifier scoring whether a
//! frame is real. Externally trained classifier weights can be dropped in via
//! the checkpoint path as long as they follow the `discriminator.*` naming.

use super::{conv, linear, ModelConfig};
use crate::error::{Error, Result};
use crate::params::Binder;
use vseg_autograd::Tensor;

/// Probability that `frame` is a real frame, strictly inside (0, 1).
pub fn discriminate(frame: &Tensor, b: &Binder, cfg: &ModelConfig) -> Result<Tensor> {
    if frame.shape() != [3, cfg.height, cfg.width] {
        return Err(Error::Shape(format!(
            "discriminator input has shape {:?}, expected [3, {}, {}]",
            frame.shape(),
            cfg.height,
            cfg.width
        )));
    }
    if !frame.value().iter().all(|v| v.is_finite()) {
        return Err(Error::Data("discriminator input is not finite".into()));
    }
    let mut x = frame.clone();
    for i in 1..=4 {
        x = conv(b, &format!("discriminator.block{i}"), &x, 2, 1).silu();
    }
    let pooled = x.global_avg_pool().reshape(&[1, cfg.disc_channels[3]]);
    Ok(linear(b, "discriminator.out", &pooled)
        .sigmoid()
        .clamp(1e-12, 1.0 - 1e-12)
        .reshape(&[]))
}
