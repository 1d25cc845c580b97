//! The parameterized differentiable operators: image/temporal encoders,
//! prior fusion, denoising head, reconstruction decoder and discriminator.
//!
//! All operators consume single samples in `[c, h, w]` layout; batching is
//! gradient accumulation in the training engine. Parameters live in a flat
//! [`ParamMap`] whose names are partitioned by component prefix, so the
//! engine can prove which phase touched which weights by hashing sections.

mod disc;
mod encoder;
mod fusion;
mod head;
mod recon;

pub use disc::discriminate;
pub use encoder::{image_encode, temporal_encode};
pub use fusion::fuse_prior;
pub use head::{denoise_head, sinusoidal_time_embedding};
pub use recon::reconstruct;

use crate::error::{Error, Result};
use crate::params::{Binder, ParamInit, ParamMap};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use vseg_autograd::Tensor;

/// Parameter name prefixes, one per component.
pub const SECTIONS: [&str; 6] = [
    "image_encoder",
    "temporal_encoder",
    "fusion",
    "denoise_head",
    "recon_decoder",
    "discriminator",
];

/// The component a parameter belongs to, by name prefix.
pub fn section_of(name: &str) -> Option<&'static str> {
    SECTIONS
        .iter()
        .copied()
        .find(|s| name.len() > s.len() && name.starts_with(s) && name.as_bytes()[s.len()] == b'.')
}

/// Generator side = everything except the discriminator.
pub fn is_generator_param(name: &str) -> bool {
    section_of(name).is_some_and(|s| s != "discriminator")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Patch-merging stages with one pre-norm attention block each.
    Attention,
    /// Purely convolutional stages behind the same interface, for fast runs.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Pyramid channel widths `c_1..c_4`.
    pub channels: [usize; 4],
    /// Number of previous frames fed to the temporal encoder.
    pub delta: usize,
    pub encoder: EncoderKind,
    /// Attention heads; must divide every channel width.
    pub heads: usize,
    pub time_embed_dim: usize,
    /// Diffusion timestep range the head is conditioned on.
    pub timesteps: usize,
    pub disc_channels: [usize; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            channels: [32, 64, 128, 256],
            delta: 4,
            encoder: EncoderKind::Attention,
            heads: 4,
            time_embed_dim: 64,
            timesteps: 1000,
            disc_channels: [16, 32, 64, 128],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return Err(Error::Config(format!(
                "frame size {}x{} must be a positive multiple of 32",
                self.height, self.width
            )));
        }
        if self.channels.iter().chain(&self.disc_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.encoder == EncoderKind::Attention
            && (self.heads == 0 || self.channels.iter().any(|c| c % self.heads != 0))
        {
            return Err(Error::Config(format!(
                "heads ({}) must divide every channel width {:?}",
                self.heads, self.channels
            )));
        }
        if self.delta == 0 {
            return Err(Error::Config("delta must be at least 1".into()));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even and >= 2".into()));
        }
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be positive".into()));
        }
        Ok(())
    }

    /// `(channels, height, width)` of pyramid level `j` (0-based).
    pub fn level_shape(&self, j: usize) -> (usize, usize, usize) {
        (
            self.channels[j],
            self.height >> (j + 2),
            self.width >> (j + 2),
        )
    }

    /// Latent-mask spatial size (quarter resolution).
    pub fn latent_shape(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }
}

/// Four feature maps; level `j` has shape `c_j x H/2^(j+2) x W/2^(j+2)`.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Tensor>,
}

impl Pyramid {
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.levels.len() != 4 {
            return Err(Error::Shape(format!(
                "pyramid must have 4 levels, got {}",
                self.levels.len()
            )));
        }
        for (j, level) in self.levels.iter().enumerate() {
            let (c, h, w) = cfg.level_shape(j);
            if level.shape() != [c, h, w] {
                return Err(Error::Shape(format!(
                    "pyramid level {j} has shape {:?}, expected [{c}, {h}, {w}]",
                    level.shape()
                )));
            }
        }
        Ok(())
    }

    /// All-zero pyramid of the configured shape (the disabled-prior stand-in).
    pub fn zeros(cfg: &ModelConfig) -> Pyramid {
        let levels = (0..4)
            .map(|j| {
                let (c, h, w) = cfg.level_shape(j);
                Tensor::constant(ArrayD::zeros(IxDyn(&[c, h, w])))
            })
            .collect();
        Pyramid { levels }
    }
}

/// Joint outputs of the denoising head beyond the denoised latent.
#[derive(Debug, Clone)]
pub struct MultiTaskPrediction {
    /// `H x W` real-valued map; sigmoid gives the mask probability.
    pub mask_logits: Tensor,
    /// One score per polyp category.
    pub cls_logits: Tensor,
    /// `(x_c, y_c, w, h)`, each squashed into [0,1].
    pub box_pred: Tensor,
}

/// Convolution + channel bias under `{name}.weight` / `{name}.bias`.
pub(crate) fn conv(b: &Binder, name: &str, x: &Tensor, stride: usize, pad: usize) -> Tensor {
    x.conv2d(&b.get(&format!("{name}.weight")), stride, pad)
        .add_bias_channel(&b.get(&format!("{name}.bias")))
}

/// Row-major linear map `[n, d_in] -> [n, d_out]` under the same convention.
pub(crate) fn linear(b: &Binder, name: &str, x: &Tensor) -> Tensor {
    x.matmul(&b.get(&format!("{name}.weight")))
        .add_bias_row(&b.get(&format!("{name}.bias")))
}

fn init_conv(init: &mut ParamInit, name: &str, co: usize, ci: usize, k: usize) {
    init.weight(format!("{name}.weight"), &[co, ci, k, k]);
    init.zeros(format!("{name}.bias"), &[co]);
}

fn init_linear(init: &mut ParamInit, name: &str, din: usize, dout: usize) {
    init.weight(format!("{name}.weight"), &[din, dout]);
    init.zeros(format!("{name}.bias"), &[dout]);
}

fn init_encoder(init: &mut ParamInit, cfg: &ModelConfig, prefix: &str) {
    for j in 0..4 {
        let stage = format!("{prefix}.stage{}", j + 1);
        let cj = cfg.channels[j];
        let (cin, k) = if j == 0 { (3, 4) } else { (cfg.channels[j - 1], 2) };
        init_conv(init, &format!("{stage}.patch"), cj, cin, k);
        match cfg.encoder {
            EncoderKind::Attention => {
                init.ones(format!("{stage}.ln1.gamma"), &[cj]);
                init.zeros(format!("{stage}.ln1.beta"), &[cj]);
                for p in ["wq", "wk", "wv", "wo"] {
                    init.weight(format!("{stage}.attn.{p}"), &[cj, cj]);
                }
                for p in ["bq", "bk", "bv", "bo"] {
                    init.zeros(format!("{stage}.attn.{p}"), &[cj]);
                }
                init.ones(format!("{stage}.ln2.gamma"), &[cj]);
                init.zeros(format!("{stage}.ln2.beta"), &[cj]);
                init_linear(init, &format!("{stage}.mlp.fc1"), cj, 2 * cj);
                init_linear(init, &format!("{stage}.mlp.fc2"), 2 * cj, cj);
            }
            EncoderKind::Conv => {
                init_conv(init, &format!("{stage}.refine"), cj, cj, 3);
            }
        }
    }
}

/// Builds the full parameter collection for a configuration, deterministically
/// from the seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamMap> {
    cfg.validate()?;
    let c = cfg.channels;
    let du = c[0];
    let mut init = ParamInit::new(seed);

    init_encoder(&mut init, cfg, "image_encoder");
    init_encoder(&mut init, cfg, "temporal_encoder");

    for j in 0..4 {
        init_conv(&mut init, &format!("fusion.proj{}", j + 1), c[j], 2 * c[j], 1);
    }
    for j in 0..3 {
        init_conv(&mut init, &format!("fusion.down{}", j + 1), c[j], c[j + 1], 1);
        init_conv(&mut init, &format!("fusion.smooth{}", j + 1), c[j], c[j], 3);
    }

    init_linear(&mut init, "denoise_head.time.fc1", cfg.time_embed_dim, du);
    init_linear(&mut init, "denoise_head.time.fc2", du, du);
    for j in 0..4 {
        init_conv(&mut init, &format!("denoise_head.unify{}", j + 1), du, c[j] + 1, 1);
    }
    init_conv(&mut init, "denoise_head.fuse", du, du, 3);
    init_conv(&mut init, "denoise_head.z0", 1, du, 1);
    init_conv(&mut init, "denoise_head.mask", 1, du, 1);
    init_linear(&mut init, "denoise_head.cls", du, crate::data::NUM_CLASSES);
    init_linear(&mut init, "denoise_head.box", du, 4);

    for j in 0..4 {
        init_conv(&mut init, &format!("recon_decoder.unify{}", j + 1), du, c[j], 1);
    }
    init_conv(&mut init, "recon_decoder.fuse", du, du, 3);
    init_conv(&mut init, "recon_decoder.out", 3, du, 1);

    let mut ci = 3;
    for (i, &co) in cfg.disc_channels.iter().enumerate() {
        init_conv(&mut init, &format!("discriminator.block{}", i + 1), co, ci, 4);
        ci = co;
    }
    init_linear(&mut init, "discriminator.out", cfg.disc_channels[3], 1);

    Ok(init.finish())
}

/// A small configuration for tests: 32x32 conv encoder, narrow widths.
#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        height: 32,
        width: 32,
        channels: [8, 16, 32, 64],
        delta: 2,
        encoder: EncoderKind::Conv,
        heads: 2,
        time_embed_dim: 16,
        timesteps: 50,
        disc_channels: [4, 8, 16, 32],
    }
}

#[cfg(test)]
pub(crate) fn random_pyramid(cfg: &ModelConfig, seed: u64) -> Pyramid {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let levels = (0..4)
        .map(|j| {
            let (c, h, w) = cfg.level_shape(j);
            Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[c, h, w]), |_| {
                rng.gen_range(-1.0..1.0)
            }))
        })
        .collect();
    Pyramid { levels }
}
