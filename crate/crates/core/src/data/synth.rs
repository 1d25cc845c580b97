//! Synthetic camouflaged-video generator.
//!
//! Each case is a deformable elliptical blob drifting smoothly over a
//! low-frequency textured background. Six geometry families (size ×
//! eccentricity) stand in for the six polyp categories so the class label is
//! recoverable from appearance. Easy cases have a strong foreground/background
//! intensity gap; hard cases are camouflaged (small gap) and overlaid with
//! per-frame specular highlights and pixel noise, so temporal context
//! genuinely helps on them.
//!
//! Output is a pure function of `(cfg, seed)`: all randomness flows through
//! counters derived from the seed, per lineage and per frame.

use super::{
    save_frame, save_mask, tight_bbox, CaseManifest, Difficulty, FrameAnnotation, Role,
    SplitsManifest, Visibility, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::seeds;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Total emitted cases across the train and test splits.
    pub n_cases: usize,
    pub frames_per_case: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of lineages tagged hard (low contrast + speculars).
    pub hard_fraction: f64,
    /// Relative class weights; classes are assigned by weighted round-robin.
    pub class_mix: [f64; NUM_CLASSES],
    /// Fraction of cases emitted as test cases (split ~half seen, half unseen).
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cases: 200,
            frames_per_case: 10,
            height: 64,
            width: 64,
            hard_fraction: 0.5,
            class_mix: [1.0; NUM_CLASSES],
            test_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_cases == 0 || self.frames_per_case == 0 {
            return Err(Error::Config(
                "n_cases and frames_per_case must be positive".into(),
            ));
        }
        if self.height % 32 != 0 || self.width % 32 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "frame size {}x{} must be a positive multiple of 32",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) || !(0.0..=1.0).contains(&self.test_fraction)
        {
            return Err(Error::Config(
                "hard_fraction and test_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.class_mix.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || self.class_mix.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "class_mix must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// Per-case appearance and motion parameters, fixed for the whole video.
struct Style {
    // ellipse semi-axes (px) and rotation
    a: f64,
    b: f64,
    theta0: f64,
    dtheta: f64,
    // breathing (slow radial pulsation)
    wr: f64,
    pr: f64,
    // center trajectory: c(t) = c0 + amp * sin(w t + phase)
    cx0: f64,
    cy0: f64,
    ax: f64,
    ay: f64,
    wx: f64,
    wy: f64,
    px: f64,
    py: f64,
    // appearance
    bg_base: [f64; 3],
    tex: [(f64, f64, f64, f64); 2], // (fx, fy, phase, amp) sinusoid plane waves
    fg_offset: f64,
    fg_gain: [f64; 3],
    noise_sigma: f64,
    speculars: usize,
}

/// Geometry family per class: (radius as a fraction of min(H, W), a/b ratio).
const CLASS_GEOMETRY: [(f64, f64); NUM_CLASSES] = [
    (0.10, 1.0),
    (0.16, 1.0),
    (0.22, 1.0),
    (0.12, 1.8),
    (0.17, 2.2),
    (0.23, 2.6),
];

fn plan_style(
    cfg: &SynthConfig,
    class_id: usize,
    difficulty: Difficulty,
    rng: &mut ChaCha8Rng,
) -> Style {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let min_dim = h.min(w);
    let (rel_r, ecc0) = CLASS_GEOMETRY[class_id];
    let r = rel_r * min_dim * (1.0 + rng.gen_range(-0.08..0.08));
    let ecc = ecc0 * (1.0 + rng.gen_range(-0.05..0.05));
    let mut a = r * ecc.sqrt();
    let mut b = r / ecc.sqrt();
    // Keep the blob (with breathing headroom) inside the frame.
    let cap = (min_dim / 2.0 - 3.0) / 1.08;
    if a > cap {
        let s = cap / a;
        a *= s;
        b *= s;
    }
    let margin = a * 1.08 + 2.0;
    let (half_w, half_h) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let avail_x = (half_w - margin).max(0.5);
    let avail_y = (half_h - margin).max(0.5);
    let ax = avail_x * rng.gen_range(0.4..0.9);
    let ay = avail_y * rng.gen_range(0.4..0.9);
    let cx0 = half_w + rng.gen_range(-1.0..1.0) * (avail_x - ax);
    let cy0 = half_h + rng.gen_range(-1.0..1.0) * (avail_y - ay);
    let (fg_offset, noise_sigma, speculars) = match difficulty {
        Difficulty::Easy => (0.35 + rng.gen_range(-0.03..0.03), 0.01, 0),
        Difficulty::Hard => (0.06 + rng.gen_range(-0.01..0.01), 0.04, rng.gen_range(2..=4)),
    };
    let mut tex = [(0.0, 0.0, 0.0, 0.0); 2];
    for t in &mut tex {
        *t = (
            rng.gen_range(0.5..2.0) / min_dim,
            rng.gen_range(0.5..2.0) / min_dim,
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.04..0.09),
        );
    }
    Style {
        a,
        b,
        theta0: rng.gen_range(0.0..std::f64::consts::TAU),
        dtheta: rng.gen_range(-0.04..0.04),
        wr: rng.gen_range(0.15..0.35),
        pr: rng.gen_range(0.0..std::f64::consts::TAU),
        cx0,
        cy0,
        ax,
        ay,
        wx: rng.gen_range(0.08..0.18),
        wy: rng.gen_range(0.08..0.18),
        px: rng.gen_range(0.0..std::f64::consts::TAU),
        py: rng.gen_range(0.0..std::f64::consts::TAU),
        bg_base: [
            0.55 + rng.gen_range(-0.05..0.05),
            0.40 + rng.gen_range(-0.05..0.05),
            0.38 + rng.gen_range(-0.05..0.05),
        ],
        tex,
        fg_offset,
        fg_gain: [1.0, 0.85, 0.8],
        noise_sigma,
        speculars,
    }
}

/// Renders frame `t` of a case. Returns the RGB frame (`3 x H x W`, values in
/// [0, 1]) and its binary mask.
fn render_frame(
    cfg: &SynthConfig,
    style: &Style,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> (ArrayD<f64>, Array2<f64>) {
    let (h, w) = (cfg.height, cfg.width);
    let tf = t as f64;
    let cx = style.cx0 + style.ax * (style.wx * tf + style.px).sin();
    let cy = style.cy0 + style.ay * (style.wy * tf + style.py).sin();
    let scale = 1.0 + 0.06 * (style.wr * tf + style.pr).sin();
    let (a, b) = (style.a * scale, style.b * scale);
    let theta = style.theta0 + style.dtheta * tf;
    let (ct, st) = (theta.cos(), theta.sin());
    let inside = |x: f64, y: f64| -> bool {
        let (dx, dy) = (x - cx, y - cy);
        let u = dx * ct + dy * st;
        let v = -dx * st + dy * ct;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    };

    let mut frame = ArrayD::<f64>::zeros(IxDyn(&[3, h, w]));
    let mut mask = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            // 2x2 supersampled coverage gives a softly antialiased edge; the
            // mask thresholds the same coverage so GT and rendering agree.
            let mut cov = 0.0;
            for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                if inside(xf + sx, yf + sy) {
                    cov += 0.25;
                }
            }
            if cov >= 0.5 {
                mask[(y, x)] = 1.0;
            }
            let mut texture = 0.0;
            for &(fx, fy, ph, amp) in &style.tex {
                texture += amp * (std::f64::consts::TAU * (fx * xf + fy * yf) + ph).sin();
            }
            for c in 0..3 {
                frame[[c, y, x]] =
                    style.bg_base[c] + texture + style.fg_offset * style.fg_gain[c] * cov;
            }
        }
    }

    // Per-frame specular highlights (temporally uncorrelated white spots).
    for _ in 0..style.speculars {
        let sx = rng.gen_range(0.0..w as f64);
        let sy = rng.gen_range(0.0..h as f64);
        let sigma: f64 = rng.gen_range(0.8..1.6);
        let amp: f64 = rng.gen_range(0.35..0.6);
        let reach = (3.0 * sigma).ceil() as isize;
        let (ix, iy) = (sx.round() as isize, sy.round() as isize);
        for y in (iy - reach).max(0)..=(iy + reach).min(h as isize - 1) {
            for x in (ix - reach).max(0)..=(ix + reach).min(w as isize - 1) {
                let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
                let glare = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for c in 0..3 {
                    frame[[c, y as usize, x as usize]] += glare;
                }
            }
        }
    }

    let noise = Normal::new(0.0, style.noise_sigma).expect("sigma is positive");
    frame.mapv_inplace(|v| v.clamp(0.0, 1.0));
    for v in frame.iter_mut() {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    (frame, mask)
}

/// How one emitted case relates to its source video.
struct CasePlan {
    id: String,
    lineage: usize,
    role: Role,
    difficulty: Difficulty,
    visibility: Option<Visibility>,
    class_id: usize,
    frame_start: usize,
}

fn plan_cases(cfg: &SynthConfig) -> Vec<CasePlan> {
    let n_test = if cfg.n_cases >= 2 && cfg.test_fraction > 0.0 {
        ((cfg.n_cases as f64 * cfg.test_fraction).round() as usize).clamp(1, cfg.n_cases - 1)
    } else {
        0
    };
    let n_train = cfg.n_cases - n_test;
    let n_seen = n_test.div_ceil(2).min(n_train);
    let n_unseen = n_test - n_seen;
    let n_lineages = n_train + n_unseen;

    // Interleaved difficulty assignment hits hard_fraction exactly (to
    // rounding) within every contiguous block of lineages.
    let difficulty_of = |l: usize| {
        let hf = cfg.hard_fraction;
        if ((l + 1) as f64 * hf).floor() > (l as f64 * hf).floor() {
            Difficulty::Hard
        } else {
            Difficulty::Easy
        }
    };
    // Weighted round-robin over classes.
    let total: f64 = cfg.class_mix.iter().sum();
    let mut acc = [0.0f64; NUM_CLASSES];
    let mut class_of = Vec::with_capacity(n_lineages);
    for _ in 0..n_lineages {
        for (a, w) in acc.iter_mut().zip(&cfg.class_mix) {
            *a += w / total;
        }
        let best = (0..NUM_CLASSES)
            .max_by(|&i, &j| acc[i].partial_cmp(&acc[j]).unwrap().then(j.cmp(&i)))
            .unwrap();
        acc[best] -= 1.0;
        class_of.push(best);
    }

    let mut plans = Vec::with_capacity(cfg.n_cases);
    for l in 0..n_train {
        plans.push(CasePlan {
            id: format!("v{l:04}_a"),
            lineage: l,
            role: Role::Train,
            difficulty: difficulty_of(l),
            visibility: None,
            class_id: class_of[l],
            frame_start: 0,
        });
    }
    // Seen test cases continue the first n_seen train videos past the frames
    // used for training; unseen test cases come from fresh lineages.
    for l in 0..n_seen {
        plans.push(CasePlan {
            id: format!("v{l:04}_b"),
            lineage: l,
            role: Role::Test,
            difficulty: difficulty_of(l),
            visibility: Some(Visibility::Seen),
            class_id: class_of[l],
            frame_start: cfg.frames_per_case,
        });
    }
    for k in 0..n_unseen {
        let l = n_train + k;
        plans.push(CasePlan {
            id: format!("v{l:04}_u"),
            lineage: l,
            role: Role::Test,
            difficulty: difficulty_of(l),
            visibility: Some(Visibility::Unseen),
            class_id: class_of[l],
            frame_start: 0,
        });
    }
    plans
}

/// Writes a complete synthetic dataset under `root` and returns its manifest.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64, root: &Path) -> Result<SplitsManifest> {
    cfg.validate()?;
    let plans = plan_cases(cfg);

    let mut cases = Vec::with_capacity(plans.len());
    for plan in &plans {
        let mut style_rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::purpose::CASE, plan.lineage as u64, 0]));
        let style = plan_style(cfg, plan.class_id, plan.difficulty, &mut style_rng);

        let dir = root.join(plan.role.as_str()).join(&plan.id);
        fs::create_dir_all(dir.join("Frame"))?;
        fs::create_dir_all(dir.join("GT"))?;
        let mut ann = fs::File::create(dir.join("annotations.jsonl"))?;
        for t in plan.frame_start..plan.frame_start + cfg.frames_per_case {
            let mut frame_rng = ChaCha8Rng::seed_from_u64(seeds::derive(
                seed,
                &[seeds::purpose::CASE, plan.lineage as u64, 1 + t as u64],
            ));
            let (frame, mask) = render_frame(cfg, &style, t, &mut frame_rng);
            let bbox = tight_bbox(&mask).ok_or_else(|| {
                Error::Data(format!("case `{}` frame {t} rendered an empty mask", plan.id))
            })?;
            save_frame(
                &dir.join("Frame").join(format!("{t:05}.png")),
                &frame.mapv(|v| v * 2.0 - 1.0),
            )?;
            save_mask(&dir.join("GT").join(format!("{t:05}.png")), &mask)?;
            let line = serde_json::to_string(&FrameAnnotation {
                frame: t,
                class_id: plan.class_id,
                bbox,
            })?;
            writeln!(ann, "{line}")?;
        }
        cases.push(CaseManifest {
            id: plan.id.clone(),
            role: plan.role,
            difficulty: plan.difficulty,
            visibility: plan.visibility,
            class_id: plan.class_id,
            lineage: format!("v{:04}", plan.lineage),
        });
    }

    let manifest = SplitsManifest {
        height: cfg.height,
        width: cfg.width,
        cases,
    };
    fs::write(
        root.join("splits.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
