//! Training loop, optimizer, evaluation and the ablation harness.
//!
//! One optimization step runs two phases over a mini-batch of clips. The
//! generator phase diffuses each ground-truth latent to a random timestep,
//! denoises it under the fused spatiotemporal prior and minimizes the
//! multi-task objective plus the reconstruction/adversarial term, with the
//! discriminator held frozen. The discriminator phase then re-scores the
//! detached reconstructions against their real counterparts and updates only
//! discriminator weights. Every random draw derives from the run seed, so a
//! (config, seed, dataset) triple fully determines the trained model.

pub mod checkpoint;
pub mod infer;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vseg_autograd::Tensor;

use crate::codec::{binarize, encode_mask};
use crate::data::{load_dataset, resize_clip, sample_clip, DatasetIndex, Role, VideoClip};
use crate::error::{Error, Result};
use crate::losses::{
    box_loss, class_ce, disc_loss, gen_loss, mdm_loss, mse_mean, seg_loss, total_loss, LossWeights,
};
use crate::metrics::{
    aggregate_report, dice, e_measure_mean, s_measure, weighted_fbeta, Averaging, FrameScore,
    MetricReport,
};
use crate::nets::{
    denoise_head, discriminate, fuse_prior, image_encode, init_params, reconstruct,
    temporal_encode, ModelConfig, Pyramid,
};
use crate::params::{Binder, ParamMap};
use crate::schedule::{
    forward_diffuse, make_schedule, sample_noise, NoiseSchedule, ScheduleKind,
};
use crate::seeds;

/// Everything a run needs besides the seed and the dataset path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub lr_power: f64,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub schedule: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Mask-latent amplitude `b`: foreground maps to `+b`, background to `-b`.
    pub latent_scale: f64,
    /// Reverse-chain jumps at inference time.
    pub infer_steps: usize,
    /// Independent reverse chains averaged per frame at inference time.
    pub infer_samples: usize,
    /// Classification/detection supervision on the denoising head.
    pub mdm_on: bool,
    /// Temporal prior and frame reconstruction.
    pub trm_on: bool,
    /// Adversarial supervision of the reconstruction.
    pub ass_on: bool,
    /// Cap on clips per epoch after shuffling; 0 means no cap.
    pub max_clips_per_epoch: usize,
    /// Reverse-chain jumps during per-epoch validation (kept small; the final
    /// evaluation uses `infer_steps`).
    pub val_steps: usize,
    /// Cap on validation frames per epoch, spread evenly; 0 means all.
    pub val_frame_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-4,
            lr_power: 0.9,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            schedule: ScheduleKind::Linear,
            beta_start: 1e-4,
            beta_end: 0.02,
            latent_scale: 1.0,
            infer_steps: 10,
            infer_samples: 1,
            mdm_on: true,
            trm_on: true,
            ass_on: true,
            max_clips_per_epoch: 0,
            val_steps: 1,
            val_frame_cap: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_power.is_finite() && self.lr_power > 0.0) {
            return Err(Error::Config(format!(
                "lr_power must be positive, got {}",
                self.lr_power
            )));
        }
        if !(self.latent_scale.is_finite() && self.latent_scale > 0.0) {
            return Err(Error::Config(format!(
                "latent_scale must be positive, got {}",
                self.latent_scale
            )));
        }
        if self.infer_steps == 0 || self.infer_steps > self.model.timesteps {
            return Err(Error::Config(format!(
                "infer_steps must lie in 1..={}, got {}",
                self.model.timesteps, self.infer_steps
            )));
        }
        if self.val_steps == 0 || self.val_steps > self.model.timesteps {
            return Err(Error::Config(format!(
                "val_steps must lie in 1..={}, got {}",
                self.model.timesteps, self.val_steps
            )));
        }
        if self.infer_samples == 0 {
            return Err(Error::Config("infer_samples must be positive".into()));
        }
        Ok(())
    }

    /// Loss weights with the component toggles applied: no classification or
    /// detection supervision without the multi-task head, no adversarial
    /// pressure without self-supervision.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights.clone();
        if !self.mdm_on {
            w.cls = 0.0;
            w.det = 0.0;
        }
        if !self.ass_on {
            w.adv = 0.0;
        }
        w
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(
            self.schedule,
            self.model.timesteps,
            self.beta_start,
            self.beta_end,
        )
    }
}

/// Polynomial decay: `lr0 * (1 - step/total)^power`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return cfg.learning_rate;
    }
    let frac = (1.0 - step as f64 / total_steps as f64).max(0.0);
    cfg.learning_rate * frac.powf(cfg.lr_power)
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
    pub t: u64,
}

/// Adam with per-parameter slots, allocated lazily on first gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub slots: IndexMap<String, AdamSlot>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: IndexMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one bias-corrected update to every parameter with a gradient.
    /// Parameters without a gradient this step keep their moments untouched.
    pub fn step(
        &mut self,
        params: &mut ParamMap,
        grads: &IndexMap<String, ArrayD<f64>>,
        lr: f64,
    ) {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unregistered parameter `{name}`"));
            assert_eq!(
                p.shape(),
                g.shape(),
                "gradient shape mismatch for `{name}`"
            );
            let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot {
                m: ArrayD::zeros(g.raw_dim()),
                v: ArrayD::zeros(g.raw_dim()),
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
            for ((pv, (m, v)), gv) in p
                .iter_mut()
                .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
                .zip(g.iter())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One line of the JSONL training log. Component values are batch means of
/// the raw (unweighted) terms; the weighted sums appear as `L_MDM` and
/// `L_total`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    #[serde(rename = "L_seg")]
    pub l_seg: f64,
    #[serde(rename = "L_cls")]
    pub l_cls: f64,
    #[serde(rename = "L_det")]
    pub l_det: f64,
    #[serde(rename = "L_MDM")]
    pub l_mdm: f64,
    #[serde(rename = "L_G_mse")]
    pub l_g_mse: f64,
    #[serde(rename = "L_G_adv")]
    pub l_g_adv: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    /// Raised when a discriminator output needed clamping this step; kept out
    /// of the log line and reported on stderr instead.
    #[serde(skip)]
    pub d_saturated: bool,
}

fn mask_to_dyn(mask: &ndarray::Array2<f64>) -> ArrayD<f64> {
    mask.clone().into_dyn()
}

/// Runs the generator phase and (when enabled) the discriminator phase over
/// one mini-batch, updating `params` in place through `opt`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    clips: &[VideoClip],
    params: &mut ParamMap,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    step: usize,
    lr: f64,
) -> Result<StepLog> {
    if clips.is_empty() {
        return Err(Error::Config("cannot train on an empty batch".into()));
    }
    let w = cfg.effective_weights();
    let n = clips.len() as f64;
    let (lh, lw) = cfg.model.latent_shape();

    let mut log = StepLog {
        step,
        lr,
        l_seg: 0.0,
        l_cls: 0.0,
        l_det: 0.0,
        l_mdm: 0.0,
        l_g_mse: 0.0,
        l_g_adv: 0.0,
        l_d: 0.0,
        l_total: 0.0,
        d_saturated: false,
    };

    #[cfg(debug_assertions)]
    let disc_digest_before = params.digest(Some("discriminator"));

    // Generator phase: discriminator weights participate as constants, so the
    // gradient map below can only contain generator names.
    let mut fakes: Vec<ArrayD<f64>> = Vec::new();
    let gen_grads = {
        let gb = Binder::train(params);
        let db = Binder::frozen(params);
        let mut batch_acc: Option<Tensor> = None;
        for clip in clips {
            let t = rng.gen_range(0..schedule.len());
            let eps = sample_noise(&[1, lh, lw], rng);
            let z0 = encode_mask(&clip.mask, cfg.latent_scale)?;
            let z_t = forward_diffuse(&z0, t, &eps, schedule)?;

            let target = Tensor::constant(clip.target.clone());
            let spatial = image_encode(&target, &gb, &cfg.model)?;
            let temporal = if cfg.trm_on {
                let prev: Vec<Tensor> = clip
                    .prev
                    .iter()
                    .map(|f| Tensor::constant(f.clone()))
                    .collect();
                temporal_encode(&prev, &gb, &cfg.model)?
            } else {
                Pyramid::zeros(&cfg.model)
            };
            let fused = fuse_prior(&spatial, &temporal, &gb, &cfg.model)?;
            let (z0_hat, pred) =
                denoise_head(&Tensor::constant(z_t), &fused, t, &gb, &cfg.model)?;

            let prob = pred.mask_logits.sigmoid();
            let gt = Tensor::constant(mask_to_dyn(&clip.mask));
            let l_seg = seg_loss(&prob, &z0_hat, &Tensor::constant(z0), &gt)?;
            let l_cls = class_ce(&pred.cls_logits, clip.class_id)?;
            let l_det = box_loss(&pred.box_pred, &clip.bbox, w.box_loss)?;
            let l_mdm = mdm_loss(
                &l_seg,
                &pred.cls_logits,
                clip.class_id,
                &pred.box_pred,
                &clip.bbox,
                &w,
            )?;

            let l_trm = if cfg.trm_on {
                let frame_hat = reconstruct(&temporal, &gb, &cfg.model)?;
                fakes.push(frame_hat.value().clone());
                let l_mse = mse_mean(&frame_hat, &target);
                let l = if w.adv > 0.0 {
                    let d_fake = discriminate(&frame_hat, &db, &cfg.model)?;
                    gen_loss(&frame_hat, &target, &d_fake, w.adv)?
                } else {
                    l_mse.clone()
                };
                log.l_g_mse += l_mse.item() / n;
                log.l_g_adv += (l.item() - l_mse.item()) / n;
                l
            } else {
                Tensor::scalar(0.0)
            };

            let l_tot = total_loss(&l_mdm, &l_trm, &w);
            log.l_seg += l_seg.item() / n;
            log.l_cls += l_cls.item() / n;
            log.l_det += l_det.item() / n;
            log.l_mdm += l_mdm.item() / n;
            batch_acc = Some(match batch_acc {
                Some(acc) => acc.add(&l_tot),
                None => l_tot,
            });
        }
        let batch_loss = batch_acc.expect("non-empty batch").mul_scalar(1.0 / n);
        log.l_total = batch_loss.item();
        check_finite_components(&log)?;
        batch_loss.backward();
        gb.grads()
    };
    debug_assert!(
        gen_grads.keys().all(|k| crate::nets::is_generator_param(k)),
        "generator phase produced discriminator gradients"
    );
    opt.step(params, &gen_grads, lr);

    #[cfg(debug_assertions)]
    debug_assert_eq!(
        params.digest(Some("discriminator")),
        disc_digest_before,
        "generator step moved discriminator weights"
    );

    // Discriminator phase on detached reconstructions.
    if cfg.ass_on && cfg.trm_on {
        #[cfg(debug_assertions)]
        let gen_digests_before: Vec<[u8; 32]> = crate::nets::SECTIONS
            .iter()
            .filter(|s| **s != "discriminator")
            .map(|s| params.digest(Some(s)))
            .collect();

        let (disc_grads, l_d, saturated) = {
            let db = Binder::train(params);
            let mut acc: Option<Tensor> = None;
            let mut saturated = false;
            for (clip, fake) in clips.iter().zip(&fakes) {
                let d_fake = discriminate(&Tensor::constant(fake.clone()), &db, &cfg.model)?;
                let d_real =
                    discriminate(&Tensor::constant(clip.target.clone()), &db, &cfg.model)?;
                let (l, sat) = disc_loss(&d_fake, &d_real);
                saturated |= sat;
                acc = Some(match acc {
                    Some(a) => a.add(&l),
                    None => l,
                });
            }
            let loss = acc.expect("non-empty batch").mul_scalar(1.0 / n);
            let l_d = loss.item();
            if !l_d.is_finite() {
                return Err(Error::Diverged(format!(
                    "discriminator loss is {l_d} at step {step}"
                )));
            }
            loss.backward();
            (db.grads(), l_d, saturated)
        };
        debug_assert!(
            disc_grads
                .keys()
                .all(|k| !crate::nets::is_generator_param(k)),
            "discriminator phase produced generator gradients"
        );
        opt.step(params, &disc_grads, lr);
        log.l_d = l_d;
        log.d_saturated = saturated;

        #[cfg(debug_assertions)]
        {
            let gen_digests_after: Vec<[u8; 32]> = crate::nets::SECTIONS
                .iter()
                .filter(|s| **s != "discriminator")
                .map(|s| params.digest(Some(s)))
                .collect();
            debug_assert_eq!(
                gen_digests_before, gen_digests_after,
                "discriminator step moved generator weights"
            );
        }
    }

    Ok(log)
}

fn check_finite_components(log: &StepLog) -> Result<()> {
    let parts = [
        ("L_seg", log.l_seg),
        ("L_cls", log.l_cls),
        ("L_det", log.l_det),
        ("L_MDM", log.l_mdm),
        ("L_G_mse", log.l_g_mse),
        ("L_G_adv", log.l_g_adv),
        ("L_total", log.l_total),
    ];
    if parts.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let dump = parts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    Err(Error::Diverged(format!(
        "non-finite loss at step {}: {dump}",
        log.step
    )))
}

/// Loads the clip ending at `frame_index` and resamples it to the model's
/// patch size when the stored resolution differs.
pub fn load_clip(
    index: &DatasetIndex,
    case_id: &str,
    frame_index: usize,
    cfg: &ModelConfig,
) -> Result<VideoClip> {
    let clip = sample_clip(index, case_id, frame_index, cfg.delta)?;
    if index.height == cfg.height && index.width == cfg.width {
        Ok(clip)
    } else {
        Ok(resize_clip(&clip, cfg.height, cfg.width))
    }
}

/// What `train` leaves behind.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_dice: Option<f64>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Options for a standalone evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub steps: usize,
    pub samples: usize,
    pub averaging: Averaging,
    /// Cap on evaluated frames, spread evenly over the test set; 0 means all.
    pub frame_cap: usize,
}

impl EvalOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        EvalOptions {
            steps: cfg.infer_steps,
            samples: cfg.infer_samples,
            averaging: Averaging::PerFrame,
            frame_cap: 0,
        }
    }
}

/// Scores the model on the test split: per-frame seeded reverse-chain
/// inference, the four benchmark metrics, then split aggregation.
pub fn evaluate(
    params: &ParamMap,
    cfg: &TrainConfig,
    index: &DatasetIndex,
    seed: u64,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<FrameScore>)> {
    let schedule = cfg.noise_schedule()?;
    // (case ordinal within the test split, case id, frame index)
    let mut jobs: Vec<(usize, &str, usize)> = Vec::new();
    for (ordinal, case) in index.cases_with_role(Role::Test).enumerate() {
        for frame in &case.frames {
            jobs.push((ordinal, case.case_id.as_str(), frame.index));
        }
    }
    if jobs.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    if opts.frame_cap > 0 && jobs.len() > opts.frame_cap {
        let total = jobs.len();
        jobs = (0..opts.frame_cap)
            .map(|k| jobs[k * total / opts.frame_cap])
            .collect();
    }

    let mut scores = Vec::with_capacity(jobs.len());
    for (ordinal, case_id, frame_index) in jobs {
        let clip = load_clip(index, case_id, frame_index, &cfg.model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
            seed,
            &[seeds::purpose::INFER, ordinal as u64, frame_index as u64],
        ));
        let prob = infer::infer_clip(
            params,
            cfg,
            &schedule,
            &clip,
            opts.steps,
            opts.samples,
            &mut rng,
        )?;
        let gt = &clip.mask;
        scores.push(FrameScore {
            case_id: case_id.to_string(),
            frame_index,
            s_alpha: s_measure(&prob, gt, 0.5)?,
            e_phi_mn: e_measure_mean(&prob, gt)?,
            f_w_beta: weighted_fbeta(&prob, gt, 1.0)?,
            dice: dice(&binarize(&prob, 0.5), gt)?,
        });
    }
    let report = aggregate_report(&scores, &index.test_tags(), opts.averaging)?;
    Ok((report, scores))
}

/// Trains a model from scratch and writes `train_log.jsonl`, `last.ckpt` and
/// `best.ckpt` (best validation Dice over the pooled test split) to
/// `out_dir`.
pub fn train(cfg: &TrainConfig, seed: u64, data_root: &Path, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let index = load_dataset(data_root)?;
    let schedule = cfg.noise_schedule()?;
    fs::create_dir_all(out_dir)?;

    let mut clip_ids: Vec<(String, usize)> = Vec::new();
    for case in index.cases_with_role(Role::Train) {
        for frame in &case.frames {
            clip_ids.push((case.case_id.clone(), frame.index));
        }
    }
    if clip_ids.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let clips_per_epoch = if cfg.max_clips_per_epoch > 0 {
        cfg.max_clips_per_epoch.min(clip_ids.len())
    } else {
        clip_ids.len()
    };
    let steps_per_epoch = clips_per_epoch.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;

    let mut params = init_params(&cfg.model, seeds::derive(seed, &[seeds::purpose::INIT]))?;
    let mut opt = AdamState::new();
    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = BufWriter::new(fs::File::create(&log_path)?);
    let last_path = out_dir.join("last.ckpt");
    let best_path = out_dir.join("best.ckpt");

    let has_test = index.cases_with_role(Role::Test).next().is_some();
    let val_opts = EvalOptions {
        steps: cfg.val_steps.min(cfg.infer_steps),
        samples: 1,
        averaging: Averaging::PerFrame,
        frame_cap: cfg.val_frame_cap,
    };

    let mut step = 0usize;
    let mut best: Option<(usize, f64)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = clip_ids.clone();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::purpose::SHUFFLE, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        order.truncate(clips_per_epoch);

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let clips = batch
                .iter()
                .map(|(case_id, i)| load_clip(&index, case_id, *i, &cfg.model))
                .collect::<Result<Vec<_>>>()?;
            let lr = lr_at(step, total_steps, cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
                seed,
                &[seeds::purpose::SAMPLE, epoch as u64, batch_idx as u64],
            ));
            let line = train_step(
                &clips,
                &mut params,
                &mut opt,
                cfg,
                &schedule,
                &mut rng,
                step,
                lr,
            )?;
            if line.d_saturated {
                eprintln!("step {step}: discriminator output saturated");
            }
            serde_json::to_writer(&mut log_file, &line)?;
            log_file.write_all(b"\n")?;
            step += 1;
        }
        log_file.flush()?;

        let mut ckpt = checkpoint::Checkpoint {
            config: cfg.clone(),
            seed,
            epoch: (epoch + 1) as u64,
            step: step as u64,
            best_dice: best.map(|(_, d)| d),
            params,
            opt,
        };
        checkpoint::save(&ckpt, &last_path)?;

        if has_test {
            let (report, _) = evaluate(&ckpt.params, cfg, &index, seed, &val_opts)?;
            let val_dice = report
                .row("all")
                .map(|r| r.dice)
                .ok_or_else(|| Error::Data("validation report lacks the pooled split".into()))?;
            if best.map_or(true, |(_, d)| val_dice > d) {
                best = Some((epoch, val_dice));
                ckpt.best_dice = Some(val_dice);
                checkpoint::save(&ckpt, &best_path)?;
            }
        }
        params = ckpt.params;
        opt = ckpt.opt;
    }

    // An untrained run still leaves loadable artifacts behind.
    let ckpt = checkpoint::Checkpoint {
        config: cfg.clone(),
        seed,
        epoch: cfg.epochs as u64,
        step: step as u64,
        best_dice: best.map(|(_, d)| d),
        params,
        opt,
    };
    checkpoint::save(&ckpt, &last_path)?;
    if !best_path.exists() {
        checkpoint::save(&ckpt, &best_path)?;
    }
    log_file.flush()?;

    Ok(TrainSummary {
        steps: step,
        epochs: cfg.epochs,
        best_epoch: best.map(|(e, _)| e),
        best_dice: best.map(|(_, d)| d),
        last_checkpoint: last_path,
        best_checkpoint: best_path,
        log_path,
    })
}

/// One component setting of the ablation grid, named after its table row.
#[derive(Debug, Clone, Copy)]
pub struct AblationRow {
    pub name: &'static str,
    pub mdm: bool,
    pub trm: bool,
    pub ass: bool,
}

/// The component grid: the bare diffusion baseline, each addition in
/// isolation, the temporal pair, and the full model.
pub const ABLATION_GRID: [AblationRow; 5] = [
    AblationRow { name: "no1", mdm: false, trm: false, ass: false },
    AblationRow { name: "no2", mdm: true, trm: false, ass: false },
    AblationRow { name: "no3", mdm: false, trm: true, ass: false },
    AblationRow { name: "no4", mdm: false, trm: true, ass: true },
    AblationRow { name: "full", mdm: true, trm: true, ass: true },
];

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub row: AblationRow,
    pub report: MetricReport,
}

/// Trains every grid row with the same seed and dataset, evaluates each best
/// checkpoint, and writes a combined `ablation.csv` next to the run folders.
pub fn ablate(
    base: &TrainConfig,
    seed: u64,
    data_root: &Path,
    out_dir: &Path,
) -> Result<Vec<AblationOutcome>> {
    let index = load_dataset(data_root)?;
    let mut outcomes = Vec::with_capacity(ABLATION_GRID.len());
    for row in ABLATION_GRID {
        let mut cfg = base.clone();
        cfg.mdm_on = row.mdm;
        cfg.trm_on = row.trm;
        cfg.ass_on = row.ass;
        let run_dir = out_dir.join(row.name);
        let summary = train(&cfg, seed, data_root, &run_dir)?;
        let ckpt = checkpoint::load(&summary.best_checkpoint)?;
        let (report, _) = evaluate(
            &ckpt.params,
            &cfg,
            &index,
            seed,
            &EvalOptions::from_config(&cfg),
        )?;
        outcomes.push(AblationOutcome { row, report });
    }

    let mut csv = String::from(
        "model,mdm,trm,ass,split,n_frames,S_alpha,E_phi_mn,F_w_beta,Dice\n",
    );
    for o in &outcomes {
        for r in &o.report.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}\n",
                o.row.name,
                o.row.mdm,
                o.row.trm,
                o.row.ass,
                r.split,
                r.n_frames,
                r.s_alpha,
                r.e_phi_mn,
                r.f_w_beta,
                r.dice
            ));
        }
    }
    fs::write(out_dir.join("ablation.csv"), csv)?;
    Ok(outcomes)
}
