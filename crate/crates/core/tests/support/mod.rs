//! Shared helpers for the integration suites: naive reference
//! implementations of the four evaluation metrics, plus random instance
//! generators.
//!
//! The references are deliberate line-by-line transcriptions of the published
//! metric definitions onto plain `Vec<Vec<f64>>` grids — nested scalar loops,
//! no shared code with the library crate — so a disagreement points at a real
//! defect in one side's math rather than at a common helper.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = f64::EPSILON;

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(a: &Array2<f64>) -> Grid {
    let (h, w) = a.dim();
    (0..h).map(|y| (0..w).map(|x| a[(y, x)]).collect()).collect()
}

fn grid_sum(g: &Grid) -> f64 {
    g.iter().flatten().sum()
}

fn mean(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn sample_std(vals: &[f64]) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let m = mean(vals);
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
    var.sqrt()
}

/// `2|P and G| / (|P| + |G|)`, both-empty counting as agreement.
pub fn ref_dice(pred: &Grid, gt: &Grid) -> f64 {
    let mut inter = 0.0;
    let mut total = 0.0;
    for (pr, gr) in pred.iter().zip(gt) {
        for (&p, &g) in pr.iter().zip(gr) {
            if p == 1.0 && g == 1.0 {
                inter += 1.0;
            }
            total += p + g;
        }
    }
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

/// Object term of the structure measure: the foreground (resp. inverted
/// background) prediction values scored by `2x / (x^2 + 1 + sigma_x)`.
fn ref_object_term(vals: &[f64]) -> f64 {
    let x = mean(vals);
    let s = sample_std(vals);
    2.0 * x / (x * x + 1.0 + s + EPS)
}

/// Region similarity of one block: the covariance form
/// `4 x y s_xy / ((x^2 + y^2)(s_x + s_y))` with sample (n-1) moments. The
/// degenerate both-moments-vanish case (score 1) holds in exact arithmetic
/// precisely when both blocks are constant, so it is decided by an exact
/// constancy test rather than by comparing rounded moments with zero.
fn ref_region_similarity(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    if p.iter().all(|&v| v == p[0]) && g.iter().all(|&v| v == g[0]) {
        return 1.0;
    }
    let n = p.len() as f64;
    let x = mean(p);
    let y = mean(g);
    let denom = n - 1.0 + EPS;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in p.iter().zip(g) {
        sx += (a - x) * (a - x);
        sy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    let num = 4.0 * x * y * sxy;
    let den = (x * x + y * y) * (sx + sy);
    if num != 0.0 {
        num / (den + EPS)
    } else {
        0.0
    }
}

/// Structure measure: `alpha * S_object + (1 - alpha) * S_region`; an
/// all-background ground truth scores `1 - mean(prob)`, an all-foreground one
/// `mean(prob)`; the result is clamped to [0, 1].
pub fn ref_s_measure(prob: &Grid, gt: &Grid, alpha: f64) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    let n = (h * w) as f64;
    let fg_count = grid_sum(gt);
    let mean_p = grid_sum(prob) / n;
    if fg_count == 0.0 {
        return (1.0 - mean_p).clamp(0.0, 1.0);
    }
    if fg_count == n {
        return mean_p.clamp(0.0, 1.0);
    }

    // Object-aware term: foreground values and inverted background values,
    // mixed by the foreground area fraction.
    let mut fg_vals = Vec::new();
    let mut bg_vals = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                fg_vals.push(prob[y][x]);
            } else {
                bg_vals.push(1.0 - prob[y][x]);
            }
        }
    }
    let u = fg_count / n;
    let s_object = u * ref_object_term(&fg_vals) + (1.0 - u) * ref_object_term(&bg_vals);

    // Region-aware term: four blocks split at the rounded foreground
    // centroid (the centroid pixel belongs to the top-left block), each
    // weighted by its area fraction.
    let mut my = 0.0;
    let mut mx = 0.0;
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                my += y as f64;
                mx += x as f64;
            }
        }
    }
    let cy = ((my / fg_count).round() as usize).min(h - 1);
    let cx = ((mx / fg_count).round() as usize).min(w - 1);
    let mut s_region = 0.0;
    for (r0, r1) in [(0, cy + 1), (cy + 1, h)] {
        for (c0, c1) in [(0, cx + 1), (cx + 1, w)] {
            if r0 == r1 || c0 == c1 {
                continue;
            }
            let mut ps = Vec::new();
            let mut gs = Vec::new();
            for row in prob.iter().take(r1).skip(r0) {
                for &v in row.iter().take(c1).skip(c0) {
                    ps.push(v);
                }
            }
            for row in gt.iter().take(r1).skip(r0) {
                for &v in row.iter().take(c1).skip(c0) {
                    gs.push(v);
                }
            }
            let weight = ps.len() as f64 / n;
            s_region += weight * ref_region_similarity(&ps, &gs);
        }
    }

    (alpha * s_object + (1.0 - alpha) * s_region).clamp(0.0, 1.0)
}

/// Mean enhanced-alignment measure: thresholds (k+1)/256, `>=` binarization,
/// bias-aligned maps combined as `2 h_P h_G / (h_P^2 + h_G^2)` and scored by
/// `mean((phi+1)^2/4)`; an all-background ground truth scores
/// `1 - mean(binarized)` per threshold, all-foreground `mean(binarized)`.
pub fn ref_e_measure_mean(prob: &Grid, gt: &Grid) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    let n = (h * w) as f64;
    let fg_count = grid_sum(gt);
    let mu_g = fg_count / n;
    let mut total = 0.0;
    for k in 0..256 {
        let thr = (k as f64 + 1.0) / 256.0;
        let mut bin = vec![vec![0.0f64; w]; h];
        let mut bin_sum = 0.0;
        for y in 0..h {
            for x in 0..w {
                if prob[y][x] >= thr {
                    bin[y][x] = 1.0;
                    bin_sum += 1.0;
                }
            }
        }
        let score = if fg_count == 0.0 {
            1.0 - bin_sum / n
        } else if fg_count == n {
            bin_sum / n
        } else {
            let mu_f = bin_sum / n;
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let hf = bin[y][x] - mu_f;
                    let hg = gt[y][x] - mu_g;
                    let phi = 2.0 * hf * hg / (hf * hf + hg * hg + EPS);
                    s += (phi + 1.0) * (phi + 1.0) / 4.0;
                }
            }
            s / n
        };
        total += score;
    }
    (total / 256.0).clamp(0.0, 1.0)
}

/// Weighted F-measure: background errors are substituted from the nearest
/// foreground pixel (ties to the smallest (distance^2, row, col) triple),
/// smoothed by a normalized 7x7 Gaussian (sigma 5, zero padding), capped by
/// the raw error inside the ground truth, and attenuated by
/// `B = 2 - exp(ln(0.5) d / 5)` outside it. Empty ground truth scores 1 for
/// an all-zero prediction and 0 otherwise.
pub fn ref_weighted_fbeta(prob: &Grid, gt: &Grid, beta_sq: f64) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    let fg_count = grid_sum(gt);
    if fg_count == 0.0 {
        let all_zero = prob.iter().flatten().all(|&p| p == 0.0);
        return if all_zero { 1.0 } else { 0.0 };
    }

    let mut err = vec![vec![0.0f64; w]; h];
    for y in 0..h {
        for x in 0..w {
            err[y][x] = (gt[y][x] - prob[y][x]).abs();
        }
    }

    let mut fg_pixels = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                fg_pixels.push((y, x));
            }
        }
    }

    // Substituted error field and Euclidean distances for the background.
    let mut et = err.clone();
    let mut dist = vec![vec![0.0f64; w]; h];
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                continue;
            }
            let mut best = (u64::MAX, usize::MAX, usize::MAX);
            for &(fy, fx) in &fg_pixels {
                let dy = fy as i64 - y as i64;
                let dx = fx as i64 - x as i64;
                let cand = ((dy * dy + dx * dx) as u64, fy, fx);
                if cand < best {
                    best = cand;
                }
            }
            dist[y][x] = (best.0 as f64).sqrt();
            et[y][x] = err[best.1][best.2];
        }
    }

    // Normalized 7x7 Gaussian, sigma 5, applied with zero padding.
    let mut kern = [[0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for (i, row) in kern.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as f64 - 3.0;
            let dx = j as f64 - 3.0;
            *v = (-(dy * dy + dx * dx) / 50.0).exp();
            ksum += *v;
        }
    }
    for row in kern.iter_mut() {
        for v in row.iter_mut() {
            *v /= ksum;
        }
    }
    let blurred = |y: usize, x: usize| -> f64 {
        let mut acc = 0.0;
        for (i, row) in kern.iter().enumerate() {
            for (j, &kv) in row.iter().enumerate() {
                let sy = y as i64 + i as i64 - 3;
                let sx = x as i64 + j as i64 - 3;
                if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                    acc += et[sy as usize][sx as usize] * kv;
                }
            }
        }
        acc
    };

    let mut sum_fg = 0.0;
    let mut sum_bg = 0.0;
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                let ea = blurred(y, x);
                sum_fg += if ea < err[y][x] { ea } else { err[y][x] };
            } else {
                let b = 2.0 - (0.5f64.ln() / 5.0 * dist[y][x]).exp();
                sum_bg += err[y][x] * b;
            }
        }
    }

    let tpw = fg_count - sum_fg;
    let recall = 1.0 - sum_fg / fg_count;
    let precision = tpw / (EPS + tpw + sum_bg);
    let q = (1.0 + beta_sq) * recall * precision / (EPS + recall + beta_sq * precision);
    q.clamp(0.0, 1.0)
}

/// One random (probability map, binary ground truth) pair. Ground truths mix
/// scattered pixels, rectangles, disks and the two degenerate extremes;
/// probability maps mix raw noise, 1/256-quantized noise (to land exactly on
/// the E-measure threshold grid), noisy copies of the truth, the truth
/// itself, its complement, and constants.
pub fn random_instance(rng: &mut ChaCha8Rng, side: usize) -> (Array2<f64>, Array2<f64>) {
    let gt = match rng.gen_range(0..8u32) {
        0 => {
            let density: f64 = rng.gen_range(0.05..0.95);
            Array2::from_shape_fn((side, side), |_| f64::from(rng.gen::<f64>() < density))
        }
        1 | 2 => {
            let y0 = rng.gen_range(0..side - 1);
            let y1 = rng.gen_range(y0 + 1..=side);
            let x0 = rng.gen_range(0..side - 1);
            let x1 = rng.gen_range(x0 + 1..=side);
            Array2::from_shape_fn((side, side), |(y, x)| {
                f64::from((y0..y1).contains(&y) && (x0..x1).contains(&x))
            })
        }
        3 | 4 => {
            let cy = rng.gen_range(0..side) as i64;
            let cx = rng.gen_range(0..side) as i64;
            let r2 = rng.gen_range(2..=(side as i64 / 2)).pow(2);
            Array2::from_shape_fn((side, side), |(y, x)| {
                let dy = y as i64 - cy;
                let dx = x as i64 - cx;
                f64::from(dy * dy + dx * dx <= r2)
            })
        }
        5 => {
            // Two overlapping bands: a non-convex foreground.
            let r = rng.gen_range(0..side / 2);
            let c = rng.gen_range(0..side / 2);
            Array2::from_shape_fn((side, side), |(y, x)| {
                f64::from((r..r + side / 4).contains(&y) || (c..c + side / 4).contains(&x))
            })
        }
        6 => Array2::zeros((side, side)),
        _ => Array2::ones((side, side)),
    };
    let prob = match rng.gen_range(0..6u32) {
        0 => Array2::from_shape_fn((side, side), |_| rng.gen::<f64>()),
        1 => Array2::from_shape_fn((side, side), |_| {
            (rng.gen::<f64>() * 256.0).floor() / 256.0
        }),
        2 => gt.mapv(|g| {
            let noise: f64 = rng.gen_range(-0.4..0.4);
            (g + noise).clamp(0.0, 1.0)
        }),
        3 => gt.clone(),
        4 => gt.mapv(|g| 1.0 - g),
        _ => Array2::from_elem((side, side), rng.gen::<f64>()),
    };
    (prob, gt)
}

/// Binarization used to feed Dice: foreground at probability >= 0.5.
pub fn hard_mask(prob: &Array2<f64>) -> Array2<f64> {
    prob.mapv(|p| f64::from(p >= 0.5))
}
