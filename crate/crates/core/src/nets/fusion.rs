//! Prior fusion: per-level concatenation of the image and temporal pyramids,
//! channel projection, and a top-down pyramid pass.

use super::{conv, ModelConfig, Pyramid};
use crate::error::Result;
use crate::params::Binder;
use vseg_autograd::Tensor;

/// Fuses the image pyramid `S` with the temporal prior `R`.
///
/// Per level: `P_j = proj_j([S_j ; R_j])` (1x1). Top-down: the coarsest level
/// passes through, and each finer level adds an upsampled, channel-adapted
/// copy of the level above before a 3x3 smoothing convolution.
pub fn fuse_prior(s: &Pyramid, r: &Pyramid, b: &Binder, cfg: &ModelConfig) -> Result<Pyramid> {
    s.check(cfg)?;
    r.check(cfg)?;
    let projected: Vec<Tensor> = (0..4)
        .map(|j| {
            let cat = Tensor::concat(0, &[s.levels[j].clone(), r.levels[j].clone()]);
            conv(b, &format!("fusion.proj{}", j + 1), &cat, 1, 0)
        })
        .collect();

    let mut levels = vec![projected[3].clone()];
    let mut above = projected[3].clone();
    for j in (0..3).rev() {
        let (_, h, w) = cfg.level_shape(j);
        let adapted = conv(
            b,
            &format!("fusion.down{}", j + 1),
            &above.upsample_bilinear(h, w),
            1,
            0,
        );
        above = conv(
            b,
            &format!("fusion.smooth{}", j + 1),
            &projected[j].add(&adapted),
            1,
            1,
        );
        levels.push(above.clone());
    }
    levels.reverse();
    let fused = Pyramid { levels };
    fused.check(cfg)?;
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, random_pyramid, tiny_config};
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn shape_contract_holds_at_full_width() {
        let cfg = ModelConfig::default();
        let params = init_params(&cfg, 1).unwrap();
        let b = Binder::frozen(&params);
        let s = random_pyramid(&cfg, 2);
        let r = random_pyramid(&cfg, 3);
        let h = fuse_prior(&s, &r, &b, &cfg).unwrap();
        let shapes: Vec<Vec<usize>> = h.levels.iter().map(|l| l.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![32, 16, 16],
                vec![64, 8, 8],
                vec![128, 4, 4],
                vec![256, 2, 2]
            ]
        );
    }

    /// With the projection initialized to the identity on the `S` half and a
    /// zero prior, projection is a no-op: the coarsest output equals `S_4`
    /// exactly and each finer level reduces to the plain top-down pass over
    /// `S`, which the test replays for level 3 from the same weights.
    #[test]
    fn zero_prior_with_identity_projection_reduces_to_the_image_pass() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 4).unwrap();
        for j in 0..4 {
            let c = cfg.channels[j];
            let w = params
                .get_mut(&format!("fusion.proj{}.weight", j + 1))
                .unwrap();
            *w = ArrayD::zeros(IxDyn(&[c, 2 * c, 1, 1]));
            for o in 0..c {
                w[[o, o, 0, 0]] = 1.0;
            }
        }
        let b = Binder::frozen(&params);
        let s = random_pyramid(&cfg, 5);
        let zero = Pyramid::zeros(&cfg);
        let fused = fuse_prior(&s, &zero, &b, &cfg).unwrap();

        let same = |a: &Tensor, e: &Tensor| {
            a.value()
                .iter()
                .zip(e.value().iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        assert!(same(&fused.levels[3], &s.levels[3]), "coarsest level must pass through");

        let (_, h3, w3) = cfg.level_shape(2);
        let adapted = conv(&b, "fusion.down3", &s.levels[3].upsample_bilinear(h3, w3), 1, 0);
        let expect = conv(&b, "fusion.smooth3", &s.levels[2].add(&adapted), 1, 1);
        assert!(same(&fused.levels[2], &expect), "level 3 must be the plain top-down step");
    }

    #[test]
    fn perturbing_the_coarsest_prior_reaches_the_finest_output() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 6).unwrap();
        let b = Binder::frozen(&params);
        let s = random_pyramid(&cfg, 7);
        let r = random_pyramid(&cfg, 8);
        let h1 = fuse_prior(&s, &r, &b, &cfg).unwrap();

        let mut r2 = r.clone();
        let mut v = r2.levels[3].value().clone();
        v[[0, 0, 0]] += 1.0;
        r2.levels[3] = Tensor::constant(v);
        let h2 = fuse_prior(&s, &r2, &b, &cfg).unwrap();

        let diff: f64 = h1.levels[0]
            .value()
            .iter()
            .zip(h2.levels[0].value().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0, "top-down path failed to propagate a coarse change");
    }

    #[test]
    fn mismatched_pyramids_are_rejected() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 9).unwrap();
        let b = Binder::frozen(&params);
        let s = random_pyramid(&cfg, 10);
        let mut r = random_pyramid(&cfg, 11);
        r.levels.pop();
        assert!(fuse_prior(&s, &r, &b, &cfg).is_err());
    }
}
