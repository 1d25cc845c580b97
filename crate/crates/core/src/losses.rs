//! Training objectives: segmentation loss, multi-task loss, adversarial
//! discriminator/generator losses, and the weighted total.
//!
//! Every function is a pure map from tensors to a zero-dimensional tensor, so
//! gradients flow to whatever inputs carry them. Probabilities entering a
//! logarithm are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` first.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use vseg_autograd::Tensor;

/// Interior clamp applied to probabilities before any `log`.
pub const PROB_CLAMP: f64 = 1e-7;

/// How the detection head is penalized against the target box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxLoss {
    /// Coordinate-wise binary cross-entropy on [0,1]-normalized coordinates.
    Bce,
    /// Mean absolute error.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub seg: f64,
    pub cls: f64,
    pub det: f64,
    pub adv: f64,
    pub mdm: f64,
    pub trm: f64,
    pub box_loss: BoxLoss,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            seg: 0.5,
            cls: 0.05,
            det: 0.2,
            adv: 0.001,
            mdm: 0.75,
            trm: 0.25,
            box_loss: BoxLoss::Bce,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.seg, self.cls, self.det, self.adv, self.mdm, self.trm];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy of a probability map against targets in [0,1].
pub fn bce_mean(prob: &Tensor, target: &Tensor) -> Tensor {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pos = target.mul(&p.ln());
    let neg = target
        .neg()
        .add_scalar(1.0)
        .mul(&p.neg().add_scalar(1.0).ln());
    pos.add(&neg).mean_all().neg()
}

/// Mean squared error over all elements.
pub fn mse_mean(a: &Tensor, b: &Tensor) -> Tensor {
    let d = a.sub(b);
    d.mul(&d).mean_all()
}

/// Soft-IoU loss `1 - (|P∩G| + ε) / (|P∪G| + ε)` on soft counts, ε = 1.
pub fn soft_iou_loss(prob: &Tensor, gt: &Tensor) -> Tensor {
    let inter = prob.mul(gt).sum_all();
    let union = prob.sum_all().add(&gt.sum_all()).sub(&inter);
    Tensor::scalar(1.0).sub(&inter.add_scalar(1.0).div(&union.add_scalar(1.0)))
}

/// Segmentation objective: pixel BCE + latent MSE + soft-IoU.
pub fn seg_loss(prob: &Tensor, z0_hat: &Tensor, z0: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_same_shape(prob, gt, "seg_loss mask")?;
    check_same_shape(z0_hat, z0, "seg_loss latent")?;
    Ok(bce_mean(prob, gt)
        .add(&mse_mean(z0_hat, z0))
        .add(&soft_iou_loss(prob, gt)))
}

/// Cross-entropy of a 1-D logit vector against a class index.
pub fn class_ce(cls_logits: &Tensor, y_cls: usize) -> Result<Tensor> {
    let n = cls_logits.shape().first().copied().unwrap_or(0);
    if cls_logits.shape().len() != 1 || n == 0 {
        return Err(Error::Shape(format!(
            "class logits must be a 1-D vector, got {:?}",
            cls_logits.shape()
        )));
    }
    if y_cls >= n {
        return Err(Error::Index(format!("class index {y_cls} out of 0..{n}")));
    }
    Ok(cls_logits.log_softmax_1d().narrow(0, y_cls, 1).sum_all().neg())
}

/// Detection penalty between a squashed box prediction and its target.
pub fn box_loss(box_pred: &Tensor, y_box: &[f64; 4], kind: BoxLoss) -> Result<Tensor> {
    if box_pred.shape() != [4] {
        return Err(Error::Shape(format!(
            "box prediction must have shape [4], got {:?}",
            box_pred.shape()
        )));
    }
    if y_box.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data(format!("target box {y_box:?} leaves [0,1]")));
    }
    let target = Tensor::constant(
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[4]), y_box.to_vec())
            .expect("four coordinates fill shape [4]"),
    );
    Ok(match kind {
        BoxLoss::Bce => bce_mean(box_pred, &target),
        BoxLoss::L1 => {
            let d = box_pred.sub(&target);
            d.relu().add(&d.neg().relu()).mean_all()
        }
    })
}

/// Multi-task objective: weighted segmentation + classification + detection.
pub fn mdm_loss(
    seg: &Tensor,
    cls_logits: &Tensor,
    y_cls: usize,
    box_pred: &Tensor,
    y_box: &[f64; 4],
    w: &LossWeights,
) -> Result<Tensor> {
    let cls = class_ce(cls_logits, y_cls)?;
    let det = box_loss(box_pred, y_box, w.box_loss)?;
    Ok(seg
        .mul_scalar(w.seg)
        .add(&cls.mul_scalar(w.cls))
        .add(&det.mul_scalar(w.det)))
}

/// Discriminator objective `-log(1 - D(fake)) - log(D(real))`.
///
/// Inputs are clamped into the open interval first; the flag reports whether
/// clamping actually moved a value (a saturated discriminator).
pub fn disc_loss(d_fake: &Tensor, d_real: &Tensor) -> (Tensor, bool) {
    let saturated = d_fake
        .value()
        .iter()
        .chain(d_real.value().iter())
        .any(|&v| !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&v));
    let df = d_fake.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let dr = d_real.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = df
        .neg()
        .add_scalar(1.0)
        .ln()
        .neg()
        .add(&dr.ln().neg());
    (loss, saturated)
}

/// Generator objective: reconstruction MSE minus the spoofing reward. Its
/// value is the temporal-reasoning loss fed into `total_loss`.
pub fn gen_loss(
    frame_hat: &Tensor,
    frame: &Tensor,
    d_fake: &Tensor,
    lambda_adv: f64,
) -> Result<Tensor> {
    check_same_shape(frame_hat, frame, "gen_loss frames")?;
    let spoof = d_fake.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
    Ok(mse_mean(frame_hat, frame).sub(&spoof.mul_scalar(lambda_adv)))
}

/// Weighted sum of the multi-task and temporal-reasoning objectives.
pub fn total_loss(l_mdm: &Tensor, l_trm: &Tensor, w: &LossWeights) -> Tensor {
    l_mdm.mul_scalar(w.mdm).add(&l_trm.mul_scalar(w.trm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use vseg_autograd::check::assert_gradcheck;

    fn arr(shape: &[usize], vals: Vec<f64>) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), vals).unwrap()
    }

    fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> ArrayD<f64> {
        arr(&[n], (0..n).map(|_| rng.gen_range(0.05..0.95)).collect())
    }

    #[test]
    fn uniform_probability_bce_is_ln_two_per_pixel() {
        let prob = Tensor::constant(ArrayD::from_elem(IxDyn(&[8, 8]), 0.5));
        let gt = Tensor::constant(arr(
            &[8, 8],
            (0..64).map(|i| f64::from(i % 3 == 0)).collect(),
        ));
        assert_abs_diff_eq!(
            bce_mean(&prob, &gt).item(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
    }

    #[test]
    fn perfect_prediction_drives_seg_loss_to_the_floor() {
        let gt_vals = arr(&[6, 6], (0..36).map(|i| f64::from(i % 2 == 0)).collect());
        let prob = Tensor::constant(gt_vals.mapv(|g| g.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)));
        let gt = Tensor::constant(gt_vals);
        let z0 = Tensor::constant(ArrayD::from_elem(IxDyn(&[1, 2, 2]), 0.3));
        let loss = seg_loss(&prob, &z0, &z0, &gt).unwrap();
        assert!(loss.item() <= 1e-5, "seg loss floor violated: {}", loss.item());
    }

    #[test]
    fn soft_iou_matches_naive_set_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let p: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g: Vec<f64> = (0..64).map(|_| f64::from(rng.gen_bool(0.4))).collect();
            let inter: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            let union: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>() - inter;
            let expect = 1.0 - (inter + 1.0) / (union + 1.0);
            let got = soft_iou_loss(
                &Tensor::constant(arr(&[8, 8], p)),
                &Tensor::constant(arr(&[8, 8], g)),
            )
            .item();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn class_term_is_ln_six_for_uniform_logits() {
        let logits = Tensor::constant(ArrayD::from_elem(IxDyn(&[6]), 0.7));
        let ce = class_ce(&logits, 4).unwrap().item();
        assert_abs_diff_eq!(ce, 6.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mdm_loss_is_linear_in_its_weights() {
        let seg = Tensor::scalar(0.8);
        let logits = Tensor::constant(arr(&[6], vec![0.1, 0.9, -0.2, 0.4, 0.0, -1.0]));
        let boxp = Tensor::constant(arr(&[4], vec![0.5, 0.4, 0.3, 0.6]));
        let y_box = [0.45, 0.5, 0.25, 0.55];
        let zero = LossWeights {
            seg: 0.0,
            cls: 0.0,
            det: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(
            mdm_loss(&seg, &logits, 2, &boxp, &y_box, &zero).unwrap().item(),
            0.0
        );
        let w1 = LossWeights::default();
        let mut w2 = w1;
        w2.det *= 2.0;
        let l1 = mdm_loss(&seg, &logits, 2, &boxp, &y_box, &w1).unwrap().item();
        let l2 = mdm_loss(&seg, &logits, 2, &boxp, &y_box, &w2).unwrap().item();
        let det_term = box_loss(&boxp, &y_box, BoxLoss::Bce).unwrap().item();
        assert_abs_diff_eq!(l2 - l1, w1.det * det_term, epsilon = 1e-12);
    }

    #[test]
    fn balanced_discriminator_scores_two_ln_two() {
        let (loss, saturated) = disc_loss(&Tensor::scalar(0.5), &Tensor::scalar(0.5));
        assert_abs_diff_eq!(loss.item(), 2.0 * std::f64::consts::LN_2, epsilon = 1e-9);
        assert!(!saturated);
    }

    #[test]
    fn perfect_discriminator_loss_vanishes_and_saturation_is_flagged() {
        let (loss, saturated) = disc_loss(&Tensor::scalar(1e-9), &Tensor::scalar(1.0));
        assert!(saturated);
        assert!(loss.item() < 1e-5);
        let (_, ok) = disc_loss(&Tensor::scalar(0.3), &Tensor::scalar(0.7));
        assert!(!ok);
    }

    #[test]
    fn disc_loss_gradient_signs() {
        let df = Tensor::leaf(ArrayD::from_elem(IxDyn(&[]), 0.3));
        let dr = Tensor::leaf(ArrayD::from_elem(IxDyn(&[]), 0.6));
        let (loss, _) = disc_loss(&df, &dr);
        loss.backward();
        assert!(df.grad().unwrap()[IxDyn(&[])] > 0.0);
        assert!(dr.grad().unwrap()[IxDyn(&[])] < 0.0);
    }

    #[test]
    fn gen_loss_components() {
        let frame = Tensor::constant(arr(&[3, 2, 2], (0..12).map(|i| i as f64 / 12.0).collect()));
        let perfect = gen_loss(&frame, &frame, &Tensor::scalar(1.0), 0.001).unwrap();
        assert_abs_diff_eq!(perfect.item(), 0.0, epsilon = 1e-9);

        let shifted = Tensor::constant(frame.value().mapv(|v| v + 0.1));
        let pure = gen_loss(&shifted, &frame, &Tensor::scalar(0.2), 0.0).unwrap();
        assert_abs_diff_eq!(pure.item(), 0.01, epsilon = 1e-12);

        let with_adv = gen_loss(&shifted, &frame, &Tensor::scalar(0.5), 0.001).unwrap();
        assert_abs_diff_eq!(
            with_adv.item() - pure.item(),
            0.001 * std::f64::consts::LN_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn total_loss_closed_forms() {
        let w = LossWeights::default();
        assert_eq!(
            total_loss(&Tensor::scalar(1.0), &Tensor::scalar(1.0), &w).item(),
            1.0
        );
        assert_abs_diff_eq!(
            total_loss(&Tensor::scalar(0.0), &Tensor::scalar(3.0), &w).item(),
            0.75,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            total_loss(&Tensor::scalar(2.0), &Tensor::scalar(4.0), &w).item(),
            2.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prob = random_probs(&mut rng, 16);
        let gt: ArrayD<f64> = arr(&[16], (0..16).map(|i| f64::from(i % 3 == 0)).collect());
        let gtc = gt.clone();
        assert_gradcheck(
            move |xs| {
                let g = Tensor::constant(gtc.clone());
                bce_mean(&xs[0], &g).add(&soft_iou_loss(&xs[0], &g))
            },
            &[prob],
            1e-5,
            1e-4,
        );

        let logits = random_probs(&mut rng, 6);
        assert_gradcheck(
            |xs| class_ce(&xs[0], 3).unwrap(),
            &[logits],
            1e-5,
            1e-4,
        );

        let boxp = arr(&[4], vec![0.3, 0.6, 0.2, 0.7]);
        assert_gradcheck(
            |xs| box_loss(&xs[0], &[0.4, 0.5, 0.3, 0.6], BoxLoss::Bce).unwrap(),
            &[boxp.clone()],
            1e-5,
            1e-4,
        );
        assert_gradcheck(
            |xs| box_loss(&xs[0], &[0.4, 0.5, 0.3, 0.6], BoxLoss::L1).unwrap(),
            &[boxp],
            1e-5,
            1e-4,
        );

        let fh = random_probs(&mut rng, 12);
        let fr = random_probs(&mut rng, 12);
        assert_gradcheck(
            move |xs| gen_loss(&xs[0], &xs[1], &xs[2].mean_all(), 0.001).unwrap(),
            &[fh, fr, arr(&[1], vec![0.4])],
            1e-5,
            1e-4,
        );
    }

    #[test]
    fn weights_validate_rejects_negative() {
        let mut w = LossWeights::default();
        w.cls = -0.1;
        assert!(w.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
