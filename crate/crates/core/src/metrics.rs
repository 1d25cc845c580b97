//! Segmentation quality metrics and per-split aggregation.
//!
//! The four metrics follow the community-standard definitions: Dice on
//! binarized masks, structure measure (object + region terms, alpha = 0.5),
//! mean enhanced-alignment measure over 256 thresholds, and the weighted
//! F-measure (beta^2 = 1, 7x7 Gaussian with sigma 5, distance attenuation
//! constant 5). Degenerate all-background ground truth follows the benchmark
//! toolkit conventions documented on each function.

use crate::data::{Difficulty, Visibility};
use crate::error::{Error, Result};
use indexmap::IndexMap;
use ndarray::Array2;
use serde::Serialize;

const EPS: f64 = f64::EPSILON;

/// Thresholds used by the mean E-measure: (k+1)/256 for k in 0..256. The grid
/// excludes 0 — thresholding at 0 would call everything foreground and make
/// even a perfect prediction score below 1.
pub const E_MEASURE_THRESHOLDS: usize = 256;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "metric inputs {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_binary(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!("{what} is not binary")));
    }
    Ok(())
}

/// Overlap coefficient `2|P*G| / (|P| + |G|)` on binary masks; two empty
/// masks count as perfect agreement.
pub fn dice(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_same_shape(pred, gt)?;
    check_binary(pred, "prediction")?;
    check_binary(gt, "ground truth")?;
    let inter: f64 = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| if p == 1.0 && g == 1.0 { 1.0 } else { 0.0 })
        .sum();
    let total = pred.sum() + gt.sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter / total)
}

fn region_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    let (x, sigma) = region_mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(prob: &Array2<f64>, gt: &Array2<f64>) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in prob.iter().zip(gt.iter()) {
        if g == 1.0 {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = gt.sum() / gt.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Covariance-based structural comparison of one quadrant.
fn region_ssim(prob: &Array2<f64>, gt: &Array2<f64>) -> f64 {
    let n = prob.len();
    if n == 0 {
        return 0.0;
    }
    // The canonical "numerator and denominator both vanish -> 1" case is, in
    // exact arithmetic on [0,1] maps, precisely "both blocks are constant".
    // Testing constancy directly keeps the branch deterministic even when a
    // constant block's computed mean picks up rounding (in which case the
    // rounded moments would fall on an arbitrary side of zero).
    let p0 = prob.iter().next().copied().unwrap();
    let g0 = gt.iter().next().copied().unwrap();
    if prob.iter().all(|&p| p == p0) && gt.iter().all(|&g| g == g0) {
        return 1.0;
    }
    let nf = n as f64;
    let x = prob.sum() / nf;
    let y = gt.sum() / nf;
    let denom = nf - 1.0 + EPS;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (&p, &g) in prob.iter().zip(gt.iter()) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    // With at least one non-constant block, b is strictly positive (a sum of
    // squared deviations of values at least one ulp apart cannot underflow),
    // so the remaining cases are the two continuous branches.
    if a != 0.0 {
        a / (b + EPS)
    } else {
        0.0
    }
}

/// Foreground centroid, rounded half-away-from-zero to a pixel index.
fn centroid(gt: &Array2<f64>) -> (usize, usize) {
    let (h, w) = gt.dim();
    let area = gt.sum();
    let mut my = 0.0;
    let mut mx = 0.0;
    for ((y, x), &g) in gt.indexed_iter() {
        if g == 1.0 {
            my += y as f64;
            mx += x as f64;
        }
    }
    let cy = (my / area).round() as usize;
    let cx = (mx / area).round() as usize;
    (cy.min(h - 1), cx.min(w - 1))
}

fn s_region(prob: &Array2<f64>, gt: &Array2<f64>) -> f64 {
    let (h, w) = gt.dim();
    let (cy, cx) = centroid(gt);
    let n = (h * w) as f64;
    // Quadrants split just below/right of the centroid pixel, which belongs
    // to the top-left block.
    let rows = [(0, cy + 1), (cy + 1, h)];
    let cols = [(0, cx + 1), (cx + 1, w)];
    let mut score = 0.0;
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            if r0 == r1 || c0 == c1 {
                continue;
            }
            let pq = prob.slice(ndarray::s![r0..r1, c0..c1]).to_owned();
            let gq = gt.slice(ndarray::s![r0..r1, c0..c1]).to_owned();
            let weight = ((r1 - r0) * (c1 - c0)) as f64 / n;
            score += weight * region_ssim(&pq, &gq);
        }
    }
    score
}

/// Structure measure: `alpha * S_object + (1 - alpha) * S_region`, clamped to
/// [0,1]. All-background ground truth scores `1 - mean(prob)`; all-foreground
/// scores `mean(prob)`.
pub fn s_measure(prob: &Array2<f64>, gt: &Array2<f64>, alpha: f64) -> Result<f64> {
    check_same_shape(prob, gt)?;
    check_binary(gt, "ground truth")?;
    let y = gt.sum() / gt.len() as f64;
    let mean_p = prob.sum() / prob.len() as f64;
    let q = if y == 0.0 {
        1.0 - mean_p
    } else if y == 1.0 {
        mean_p
    } else {
        alpha * s_object(prob, gt) + (1.0 - alpha) * s_region(prob, gt)
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Mean enhanced-alignment measure over 256 binarization thresholds: both
/// maps are bias-aligned (means subtracted), combined as
/// `phi = 2 h_P h_G / (h_P^2 + h_G^2)` and scored by `mean((phi + 1)^2 / 4)`.
/// All-background ground truth scores `1 - mean(binarized)` per threshold;
/// all-foreground scores `mean(binarized)`.
pub fn e_measure_mean(prob: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_same_shape(prob, gt)?;
    check_binary(gt, "ground truth")?;
    let n = gt.len() as f64;
    let fg = gt.sum();
    let mu_g = fg / n;
    let mut acc = 0.0;
    for k in 0..E_MEASURE_THRESHOLDS {
        let thr = (k + 1) as f64 / E_MEASURE_THRESHOLDS as f64;
        let mut fm_sum = 0.0;
        for &p in prob.iter() {
            if p >= thr {
                fm_sum += 1.0;
            }
        }
        let score = if fg == 0.0 {
            1.0 - fm_sum / n
        } else if fg == n {
            fm_sum / n
        } else {
            let mu_f = fm_sum / n;
            let mut s = 0.0;
            for (&p, &g) in prob.iter().zip(gt.iter()) {
                let hf = f64::from(p >= thr) - mu_f;
                let hg = g - mu_g;
                let phi = 2.0 * hf * hg / (hf * hf + hg * hg + EPS);
                let e = (phi + 1.0) * (phi + 1.0) / 4.0;
                s += e;
            }
            s / n
        };
        acc += score;
    }
    Ok((acc / E_MEASURE_THRESHOLDS as f64).clamp(0.0, 1.0))
}

/// Squared distance to the nearest foreground pixel plus that pixel's
/// coordinates, for every pixel. Ties resolve to the lexicographically
/// smallest (distance^2, row, col) triple — the rule both this function and
/// the test oracle pin down so "nearest" is unambiguous on symmetric masks.
fn nearest_foreground(gt: &Array2<f64>) -> (Array2<f64>, Vec<(usize, usize)>) {
    let (h, w) = gt.dim();
    let fg: Vec<(usize, usize)> = gt
        .indexed_iter()
        .filter(|(_, &g)| g == 1.0)
        .map(|((y, x), _)| (y, x))
        .collect();
    let mut dist2 = Array2::<f64>::zeros((h, w));
    let mut nearest = vec![(0usize, 0usize); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = u64::MAX;
            let mut arg = (0usize, 0usize);
            for &(fy, fx) in &fg {
                let dy = fy as i64 - y as i64;
                let dx = fx as i64 - x as i64;
                let d2 = (dy * dy + dx * dx) as u64;
                if d2 < best {
                    best = d2;
                    arg = (fy, fx);
                }
            }
            dist2[(y, x)] = best as f64;
            nearest[y * w + x] = arg;
        }
    }
    (dist2, nearest)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Array2<f64> {
    let half = (size / 2) as f64;
    let mut k = Array2::<f64>::zeros((size, size));
    for ((y, x), v) in k.indexed_iter_mut() {
        let dy = y as f64 - half;
        let dx = x as f64 - half;
        *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
    }
    let s = k.sum();
    k / s
}

fn convolve_same_zero(src: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let (kh, kw) = kernel.dim();
    let (oy, ox) = (kh / 2, kw / 2);
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..kh {
                for dx in 0..kw {
                    let sy = y as i64 + dy as i64 - oy as i64;
                    let sx = x as i64 + dx as i64 - ox as i64;
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        acc += src[(sy as usize, sx as usize)] * kernel[(dy, dx)];
                    }
                }
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Weighted F-measure: absolute errors are substituted from the nearest
/// foreground pixel outside the ground truth, Gaussian-smoothed, capped by
/// the raw error inside the ground truth, and distance-weighted by
/// `B = 2 - exp(ln(0.5) * d / 5)` outside it. Empty ground truth scores 1
/// for an all-zero prediction and 0 otherwise.
pub fn weighted_fbeta(prob: &Array2<f64>, gt: &Array2<f64>, beta_sq: f64) -> Result<f64> {
    check_same_shape(prob, gt)?;
    check_binary(gt, "ground truth")?;
    let (h, w) = gt.dim();
    let fg_count = gt.sum();
    if fg_count == 0.0 {
        return Ok(if prob.iter().all(|&p| p == 0.0) { 1.0 } else { 0.0 });
    }
    let e: Array2<f64> = Array2::from_shape_fn((h, w), |(y, x)| (gt[(y, x)] - prob[(y, x)]).abs());
    let (dist2, nearest) = nearest_foreground(gt);
    let mut et = e.clone();
    for ((y, x), &g) in gt.indexed_iter() {
        if g == 0.0 {
            let (ny, nx) = nearest[y * w + x];
            et[(y, x)] = e[(ny, nx)];
        }
    }
    let ea = convolve_same_zero(&et, &gaussian_kernel(7, 5.0));
    let mut sum_ew_fg = 0.0;
    let mut sum_ew_bg = 0.0;
    for ((y, x), &g) in gt.indexed_iter() {
        let raw = e[(y, x)];
        if g == 1.0 {
            let min_e_ea = if ea[(y, x)] < raw { ea[(y, x)] } else { raw };
            sum_ew_fg += min_e_ea; // B = 1 inside the ground truth
        } else {
            let b = 2.0 - (0.5f64.ln() / 5.0 * dist2[(y, x)].sqrt()).exp();
            sum_ew_bg += raw * b;
        }
    }
    let tpw = fg_count - sum_ew_fg;
    let fpw = sum_ew_bg;
    let recall = 1.0 - sum_ew_fg / fg_count;
    let precision = tpw / (EPS + tpw + fpw);
    let q = (1.0 + beta_sq) * recall * precision / (EPS + recall + beta_sq * precision);
    Ok(q.clamp(0.0, 1.0))
}

/// Per-frame scores keyed by provenance.
#[derive(Debug, Clone, Serialize)]
pub struct FrameScore {
    pub case_id: String,
    pub frame_index: usize,
    pub s_alpha: f64,
    pub e_phi_mn: f64,
    pub f_w_beta: f64,
    pub dice: f64,
}

/// How frames are pooled into split means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Every frame weighs equally within its split.
    PerFrame,
    /// Frames average within their case first; cases then weigh equally.
    PerCase,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitRow {
    pub split: String,
    pub n_frames: usize,
    pub s_alpha: f64,
    pub e_phi_mn: f64,
    pub f_w_beta: f64,
    pub dice: f64,
}

/// Split means in a fixed row order: the four difficulty-visibility cells,
/// then pooled seen/unseen, then the overall pool.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub rows: Vec<SplitRow>,
}

impl MetricReport {
    pub fn row(&self, split: &str) -> Option<&SplitRow> {
        self.rows.iter().find(|r| r.split == split)
    }

    /// CSV rendering with three decimals, mirroring the benchmark tables.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,n_frames,S_alpha,E_phi_mn,F_w_beta,Dice\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{:.3},{:.3}\n",
                r.split, r.n_frames, r.s_alpha, r.e_phi_mn, r.f_w_beta, r.dice
            ));
        }
        out
    }
}

fn split_name(d: Difficulty, v: Visibility) -> String {
    format!("{}_{}", d.as_str(), v.as_str())
}

/// Pools frame scores into split means. Every case id must carry a
/// (difficulty, visibility) tag; the result is invariant to input order.
pub fn aggregate_report(
    scores: &[FrameScore],
    tags: &IndexMap<String, (Difficulty, Visibility)>,
    averaging: Averaging,
) -> Result<MetricReport> {
    // split name -> per-case accumulators (case order = tag map order).
    let mut groups: IndexMap<String, IndexMap<String, Vec<[f64; 4]>>> = IndexMap::new();
    let splits: Vec<String> = [
        split_name(Difficulty::Easy, Visibility::Seen),
        split_name(Difficulty::Easy, Visibility::Unseen),
        split_name(Difficulty::Hard, Visibility::Seen),
        split_name(Difficulty::Hard, Visibility::Unseen),
        "seen".to_string(),
        "unseen".to_string(),
        "all".to_string(),
    ]
    .into();
    for name in &splits {
        groups.insert(name.clone(), IndexMap::new());
    }
    for s in scores {
        let Some(&(d, v)) = tags.get(&s.case_id) else {
            return Err(Error::Data(format!(
                "frame {}/{} has no split assignment",
                s.case_id, s.frame_index
            )));
        };
        let vals = [s.s_alpha, s.e_phi_mn, s.f_w_beta, s.dice];
        let vis = match v {
            Visibility::Seen => "seen",
            Visibility::Unseen => "unseen",
        };
        for name in [split_name(d, v), vis.to_string(), "all".to_string()] {
            groups
                .get_mut(&name)
                .unwrap()
                .entry(s.case_id.clone())
                .or_default()
                .push(vals);
        }
    }
    let mut rows = Vec::new();
    for name in &splits {
        let cases = &groups[name];
        let n_frames: usize = cases.values().map(Vec::len).sum();
        if n_frames == 0 {
            continue;
        }
        let mut mean = [0.0f64; 4];
        match averaging {
            Averaging::PerFrame => {
                for frames in cases.values() {
                    for vals in frames {
                        for (m, v) in mean.iter_mut().zip(vals) {
                            *m += v;
                        }
                    }
                }
                for m in &mut mean {
                    *m /= n_frames as f64;
                }
            }
            Averaging::PerCase => {
                for frames in cases.values() {
                    let k = frames.len() as f64;
                    for i in 0..4 {
                        mean[i] += frames.iter().map(|v| v[i]).sum::<f64>() / k;
                    }
                }
                for m in &mut mean {
                    *m /= cases.len() as f64;
                }
            }
        }
        rows.push(SplitRow {
            split: name.clone(),
            n_frames,
            s_alpha: mean[0],
            e_phi_mn: mean[1],
            f_w_beta: mean[2],
            dice: mean[3],
        });
    }
    Ok(MetricReport { rows })
}
