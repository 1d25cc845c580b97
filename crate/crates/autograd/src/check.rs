//! Finite-difference verification of analytic gradients.

use crate::Tensor;
use ndarray::ArrayD;

/// Relative disagreement between an analytic and a numeric derivative.
/// Elements where both magnitudes sit below 1e-6 are treated as agreeing:
/// central differences carry no signal at that scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let mag = analytic.abs().max(numeric.abs());
    if mag < 1e-6 {
        0.0
    } else {
        (analytic - numeric).abs() / mag
    }
}

/// Central-difference gradient of `f` with respect to every input element.
pub fn numeric_grad<F>(mut f: F, inputs: &[ArrayD<f64>], h: f64) -> Vec<ArrayD<f64>>
where
    F: FnMut(&[ArrayD<f64>]) -> f64,
{
    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = ArrayD::<f64>::zeros(inputs[i].raw_dim());
        for k in 0..inputs[i].len() {
            let orig = work[i].as_slice().unwrap()[k];
            work[i].as_slice_mut().unwrap()[k] = orig + h;
            let fp = f(&work);
            work[i].as_slice_mut().unwrap()[k] = orig - h;
            let fm = f(&work);
            work[i].as_slice_mut().unwrap()[k] = orig;
            gi.as_slice_mut().unwrap()[k] = (fp - fm) / (2.0 * h);
        }
        grads.push(gi);
    }
    grads
}

/// Builds the scalar expression twice — once on leaves for the analytic pass,
/// once per probe on constants for the numeric pass — and asserts that every
/// element of every input gradient agrees within `tol` relative error.
pub fn assert_gradcheck<B>(build: B, inputs: &[ArrayD<f64>], h: f64, tol: f64)
where
    B: Fn(&[Tensor]) -> Tensor,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|a| Tensor::leaf(a.clone())).collect();
    let out = build(&leaves);
    assert_eq!(out.value().len(), 1, "gradcheck: expression must be scalar");
    out.backward();

    let numeric = numeric_grad(
        |vals| {
            let consts: Vec<Tensor> = vals.iter().map(|a| Tensor::constant(a.clone())).collect();
            build(&consts).item()
        },
        inputs,
        h,
    );

    for (i, num) in numeric.iter().enumerate() {
        let ana = leaves[i]
            .grad()
            .unwrap_or_else(|| ArrayD::zeros(inputs[i].raw_dim()));
        for (k, (a, n)) in ana.iter().zip(num.iter()).enumerate() {
            let e = rel_err(*a, *n);
            assert!(
                e <= tol,
                "input {i}, element {k}: analytic {a:.9e} vs numeric {n:.9e} (rel err {e:.3e})"
            );
        }
    }
}
