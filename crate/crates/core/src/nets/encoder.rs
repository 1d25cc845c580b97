//! Pyramid encoders. One parameter set per prefix; the temporal encoder runs
//! the same network over each previous frame and averages the level maps.

use super::{conv, EncoderKind, ModelConfig, Pyramid};
use crate::error::{Error, Result};
use crate::params::Binder;
use vseg_autograd::Tensor;

/// One pre-norm attention block over the `[c, h, w]` map flattened to tokens.
fn attn_block(x_map: &Tensor, b: &Binder, stage: &str, heads: usize) -> Tensor {
    let (c, h, w) = (x_map.shape()[0], x_map.shape()[1], x_map.shape()[2]);
    let n = h * w;
    let dk = c / heads;
    let x = x_map.reshape(&[c, n]).transpose2d(); // [n, c] tokens

    let ln1 = x.layer_norm_rows(
        &b.get(&format!("{stage}.ln1.gamma")),
        &b.get(&format!("{stage}.ln1.beta")),
        1e-5,
    );
    let q = ln1
        .matmul(&b.get(&format!("{stage}.attn.wq")))
        .add_bias_row(&b.get(&format!("{stage}.attn.bq")));
    let k = ln1
        .matmul(&b.get(&format!("{stage}.attn.wk")))
        .add_bias_row(&b.get(&format!("{stage}.attn.bk")));
    let v = ln1
        .matmul(&b.get(&format!("{stage}.attn.wv")))
        .add_bias_row(&b.get(&format!("{stage}.attn.bv")));
    let mut merged = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = q.narrow(1, head * dk, dk);
        let kh = k.narrow(1, head * dk, dk);
        let vh = v.narrow(1, head * dk, dk);
        let att = qh
            .matmul(&kh.transpose2d())
            .mul_scalar(1.0 / (dk as f64).sqrt())
            .softmax_rows();
        merged.push(att.matmul(&vh));
    }
    let attended = Tensor::concat(1, &merged)
        .matmul(&b.get(&format!("{stage}.attn.wo")))
        .add_bias_row(&b.get(&format!("{stage}.attn.bo")));
    let x = x.add(&attended);

    let ln2 = x.layer_norm_rows(
        &b.get(&format!("{stage}.ln2.gamma")),
        &b.get(&format!("{stage}.ln2.beta")),
        1e-5,
    );
    let hidden = super::linear(b, &format!("{stage}.mlp.fc1"), &ln2).silu();
    let x = x.add(&super::linear(b, &format!("{stage}.mlp.fc2"), &hidden));

    x.transpose2d().reshape(&[c, h, w])
}

pub(crate) fn encode_pyramid(
    frame: &Tensor,
    b: &Binder,
    cfg: &ModelConfig,
    prefix: &str,
) -> Result<Pyramid> {
    if frame.shape() != [3, cfg.height, cfg.width] {
        return Err(Error::Shape(format!(
            "encoder input has shape {:?}, expected [3, {}, {}]",
            frame.shape(),
            cfg.height,
            cfg.width
        )));
    }
    let mut x = frame.clone();
    let mut levels = Vec::with_capacity(4);
    for j in 0..4 {
        let stage = format!("{prefix}.stage{}", j + 1);
        let stride = if j == 0 { 4 } else { 2 };
        x = conv(b, &format!("{stage}.patch"), &x, stride, 0);
        x = match cfg.encoder {
            EncoderKind::Attention => attn_block(&x, b, &stage, cfg.heads),
            EncoderKind::Conv => x.add(&conv(b, &format!("{stage}.refine"), &x.silu(), 1, 1)),
        };
        levels.push(x.clone());
    }
    let pyramid = Pyramid { levels };
    pyramid.check(cfg)?;
    Ok(pyramid)
}

/// Encodes the target frame into the 4-level feature pyramid.
pub fn image_encode(frame: &Tensor, b: &Binder, cfg: &ModelConfig) -> Result<Pyramid> {
    encode_pyramid(frame, b, cfg, "image_encoder")
}

/// Encodes each previous frame with shared parameters and averages the level
/// maps over the temporal axis.
pub fn temporal_encode(frames: &[Tensor], b: &Binder, cfg: &ModelConfig) -> Result<Pyramid> {
    if frames.is_empty() {
        return Err(Error::Config(
            "temporal encoder needs at least one frame".into(),
        ));
    }
    let pyramids: Vec<Pyramid> = frames
        .iter()
        .map(|f| encode_pyramid(f, b, cfg, "temporal_encoder"))
        .collect::<Result<_>>()?;
    let levels = (0..4)
        .map(|j| {
            let per_frame: Vec<Tensor> = pyramids.iter().map(|p| p.levels[j].clone()).collect();
            Tensor::mean_stack(&per_frame)
        })
        .collect();
    Ok(Pyramid { levels })
}
