//! Noise schedules, the Gaussian forward process and the deterministic
//! reverse-chain step.
//!
//! The forward process corrupts a clean latent as
//! `z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps`, where `abar_t` is the
//! running product of `1 - beta_s` up to and including step `t`. The reverse
//! step is the variance-zero update of a chain whose denoiser predicts the
//! clean latent directly: the implied noise is recovered algebraically and
//! re-applied at the earlier timestep.

use crate::error::{Error, Result};
use ndarray::ArrayD;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Shape of the beta ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Precomputed per-timestep noise tables.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sqrt_alpha_bars: Vec<f64>,
    sqrt_one_minus_alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas. Accepts `beta = 0` (useful for
    /// identity-forward tests); [`make_schedule`] is stricter.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::Config(format!("beta {b} outside [0,1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut running = 1.0;
        for &a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        let sqrt_alpha_bars = alpha_bars.iter().map(|a| a.sqrt()).collect();
        let sqrt_one_minus_alpha_bars = alpha_bars.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            sqrt_alpha_bars,
            sqrt_one_minus_alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Index(format!(
                "timestep {t} outside schedule of length {}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.sqrt_alpha_bars[t]
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.sqrt_one_minus_alpha_bars[t]
    }
}

/// Constructs a noise schedule of `t_total` steps.
///
/// `beta_start`/`beta_end` parameterize the linear ramp. The cosine kind
/// derives its betas from the squared-cosine signal profile (offset 0.008,
/// betas capped at 0.999) and ignores the two bounds, which have no analogue
/// there.
pub fn make_schedule(
    kind: ScheduleKind,
    t_total: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if t_total == 0 {
        return Err(Error::Config("schedule length must be positive".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta bounds ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_total)
            .map(|t| {
                if t_total == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * t as f64 / (t_total - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (0..t_total)
                .map(|t| {
                    let a0 = f(t as f64 / t_total as f64);
                    let a1 = f((t + 1) as f64 / t_total as f64);
                    (1.0 - a1 / a0).min(0.999)
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(betas)
}

/// Draws a standard-normal array of the given shape from the caller's RNG.
pub fn sample_noise<R: Rng>(shape: &[usize], rng: &mut R) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || rng.sample(StandardNormal))
}

/// Forward process: mixes the clean latent with injected noise at timestep `t`.
pub fn forward_diffuse(
    z0: &ArrayD<f64>,
    t: usize,
    eps: &ArrayD<f64>,
    schedule: &NoiseSchedule,
) -> Result<ArrayD<f64>> {
    schedule.check_t(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "z0 {:?} vs eps {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    let a = schedule.sqrt_alpha_bar(t);
    let b = schedule.sqrt_one_minus_alpha_bar(t);
    Ok(z0 * a + eps * b)
}

/// Deterministic reverse update from `t` to `t_prev`; `None` emits the clean
/// prediction itself (the terminal step of the chain).
pub fn reverse_step(
    z_t: &ArrayD<f64>,
    z0_hat: &ArrayD<f64>,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<ArrayD<f64>> {
    schedule.check_t(t)?;
    if z_t.shape() != z0_hat.shape() {
        return Err(Error::Shape(format!(
            "z_t {:?} vs z0_hat {:?}",
            z_t.shape(),
            z0_hat.shape()
        )));
    }
    if z_t.iter().chain(z0_hat.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite latent in reverse_step".into()));
    }
    let Some(tp) = t_prev else {
        return Ok(z0_hat.clone());
    };
    if tp >= t {
        return Err(Error::Index(format!("t_prev {tp} must precede t {t}")));
    }
    let sa_t = schedule.sqrt_alpha_bar(t);
    let sb_t = schedule.sqrt_one_minus_alpha_bar(t);
    // With abar_t = 1 the forward process is the identity and carries no
    // noise to recover.
    let eps_hat = if sb_t == 0.0 {
        ArrayD::zeros(z_t.raw_dim())
    } else {
        (z_t - &(z0_hat * sa_t)) / sb_t
    };
    Ok(z0_hat * schedule.sqrt_alpha_bar(tp) + &eps_hat * schedule.sqrt_one_minus_alpha_bar(tp))
}

/// Strictly decreasing inference timesteps from `t_total - 1` down to 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSchedule {
    steps: Vec<usize>,
}

impl StepSchedule {
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Number of reverse jumps (one fewer than the entry count).
    pub fn k(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Splits `[0, t_total - 1]` into `k` even jumps (rounded). Rounding can
/// collide neighbours when `k` approaches `t_total`; duplicates are dropped,
/// preserving the endpoints and strict decrease.
pub fn make_step_schedule(t_total: usize, k: usize) -> Result<StepSchedule> {
    if t_total == 0 {
        return Err(Error::Config("schedule length must be positive".into()));
    }
    if k == 0 || k > t_total {
        return Err(Error::Config(format!(
            "step count {k} must lie in 1..={t_total}"
        )));
    }
    let top = (t_total - 1) as f64;
    let mut steps = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let t = (top * (1.0 - i as f64 / k as f64)).round() as usize;
        if steps.last() != Some(&t) {
            steps.push(t);
        }
    }
    debug_assert_eq!(steps.first(), Some(&(t_total - 1)));
    debug_assert_eq!(steps.last(), Some(&0));
    Ok(StepSchedule { steps })
}
