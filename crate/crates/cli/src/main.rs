//! Command-line front end for the mask-diffusion video segmentation
//! pipeline: synthetic dataset rendering, training, single-frame inference,
//! test-split evaluation and the component-ablation study.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vseg_core::codec::binarize;
use vseg_core::data::synth::{generate_synthetic, SynthConfig};
use vseg_core::data::{load_dataset, save_mask, Role, NUM_CLASSES};
use vseg_core::engine::infer::infer_clip;
use vseg_core::engine::{ablate, checkpoint, evaluate, load_clip, train, EvalOptions, TrainConfig};
use vseg_core::metrics::{dice, e_measure_mean, s_measure, weighted_fbeta, Averaging};
use vseg_core::nets::EncoderKind;
use vseg_core::schedule::ScheduleKind;

#[derive(Parser)]
#[command(
    name = "vseg",
    version,
    about = "Mask-diffusion video segmentation: data synthesis, training, inference, evaluation and ablations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic video dataset with masks, boxes and class labels.
    GenerateData(GenerateArgs),
    /// Train a model; writes checkpoints and a JSON-lines loss log.
    Train(TrainArgs),
    /// Run reverse-diffusion inference for one frame and save the mask.
    Infer(InferArgs),
    /// Score a checkpoint on the test split; writes CSV and JSON reports.
    Eval(EvalArgs),
    /// Train and score every component-ablation row with a shared seed.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for case layout, appearance and motion.
    #[arg(long)]
    seed: u64,
    /// Total cases across the train and test splits.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 10)]
    frames_per_case: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Fraction of lineages rendered with low contrast and speculars.
    #[arg(long, default_value_t = 0.5)]
    hard_fraction: f64,
    /// Fraction of cases emitted as test cases (about half seen, half unseen).
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Comma-separated relative class weights (6 values).
    #[arg(long)]
    class_mix: Option<String>,
}

/// Config resolution shared by `train` and `ablate`: defaults, then the TOML
/// file, then individual flags.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults fill any missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Clips per optimization step.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Exponent of the polynomial learning-rate decay.
    #[arg(long)]
    lr_power: Option<f64>,
    /// Beta ramp of the forward process.
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<ScheduleKind>,
    /// Length of the forward process.
    #[arg(long)]
    timesteps: Option<usize>,
    /// Reverse-chain jumps at inference time.
    #[arg(long)]
    infer_steps: Option<usize>,
    /// Independent reverse chains averaged per frame at inference time.
    #[arg(long)]
    infer_samples: Option<usize>,
    /// Model patch height (frames are resampled to this size).
    #[arg(long)]
    height: Option<usize>,
    /// Model patch width.
    #[arg(long)]
    width: Option<usize>,
    /// Comma-separated pyramid widths c1,c2,c3,c4.
    #[arg(long, value_parser = parse_channels)]
    channels: Option<Channels>,
    /// Previous frames fed to the temporal branch.
    #[arg(long)]
    delta: Option<usize>,
    /// Feature extractor: attention or conv.
    #[arg(long, value_parser = parse_encoder)]
    encoder: Option<EncoderKind>,
    /// Attention heads (must divide every pyramid width).
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    lambda_seg: Option<f64>,
    #[arg(long)]
    lambda_cls: Option<f64>,
    #[arg(long)]
    lambda_det: Option<f64>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_mdm: Option<f64>,
    #[arg(long)]
    lambda_trm: Option<f64>,
    /// Cap on clips per epoch after shuffling; 0 means all.
    #[arg(long)]
    max_clips_per_epoch: Option<usize>,
    /// Reverse-chain jumps during per-epoch validation.
    #[arg(long)]
    val_steps: Option<usize>,
    /// Cap on validation frames per epoch; 0 means all.
    #[arg(long)]
    val_frame_cap: Option<usize>,
}

#[derive(Clone)]
struct Channels([usize; 4]);

fn parse_channels(s: &str) -> std::result::Result<Channels, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    let arr: [usize; 4] = parts
        .try_into()
        .map_err(|_| "expected exactly 4 comma-separated widths".to_string())?;
    Ok(Channels(arr))
}

fn parse_schedule(s: &str) -> std::result::Result<ScheduleKind, String> {
    match s {
        "linear" => Ok(ScheduleKind::Linear),
        "cosine" => Ok(ScheduleKind::Cosine),
        other => Err(format!("unknown schedule '{other}' (expected linear or cosine)")),
    }
}

fn parse_encoder(s: &str) -> std::result::Result<EncoderKind, String> {
    match s {
        "attention" => Ok(EncoderKind::Attention),
        "conv" => Ok(EncoderKind::Conv),
        other => Err(format!("unknown encoder '{other}' (expected attention or conv)")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set! {
            epochs => epochs,
            batch_size => batch_size,
            learning_rate => learning_rate,
            lr_power => lr_power,
            schedule => schedule,
            timesteps => model.timesteps,
            infer_steps => infer_steps,
            infer_samples => infer_samples,
            height => model.height,
            width => model.width,
            delta => model.delta,
            encoder => model.encoder,
            heads => model.heads,
            lambda_seg => weights.seg,
            lambda_cls => weights.cls,
            lambda_det => weights.det,
            lambda_adv => weights.adv,
            lambda_mdm => weights.mdm,
            lambda_trm => weights.trm,
            max_clips_per_epoch => max_clips_per_epoch,
            val_steps => val_steps,
            val_frame_cap => val_frame_cap,
        }
        if let Some(Channels(c)) = self.channels {
            cfg.model.channels = c;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (as written by generate-data).
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; a (config, seed, dataset) triple is bit-reproducible.
    #[arg(long)]
    seed: u64,
    /// Drop the classification/detection co-supervision.
    #[arg(long)]
    no_mdm: bool,
    /// Drop the temporal branch and frame reconstruction.
    #[arg(long)]
    no_trm: bool,
    /// Drop the adversarial term and discriminator updates.
    #[arg(long)]
    no_ass: bool,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory holding the case to segment.
    #[arg(long)]
    data: PathBuf,
    /// Case id, e.g. v0012_a.
    #[arg(long)]
    case: String,
    /// Frame index within the case.
    #[arg(long)]
    frame: usize,
    /// Output PNG for the binarized mask (model resolution).
    #[arg(long)]
    out: PathBuf,
    /// Seed of the reverse-chain noise draw.
    #[arg(long)]
    seed: u64,
    /// Reverse-chain jumps; defaults to the checkpoint's setting.
    #[arg(long)]
    steps: Option<usize>,
    /// Averaged reverse chains; defaults to the checkpoint's setting.
    #[arg(long)]
    samples: Option<usize>,
    /// Also save the continuous probability map as a grayscale PNG.
    #[arg(long)]
    prob_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report directory (report.csv, report.json, frames.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Seed of the per-frame noise streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reverse-chain jumps; defaults to the checkpoint's setting.
    #[arg(long)]
    steps: Option<usize>,
    /// Averaged reverse chains; defaults to the checkpoint's setting.
    #[arg(long)]
    samples: Option<usize>,
    /// Average frames within each case before averaging cases.
    #[arg(long)]
    per_case: bool,
    /// Evaluate at most this many frames, spread evenly; 0 means all.
    #[arg(long, default_value_t = 0)]
    frame_cap: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Parent directory; each grid row trains in its own subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Shared seed for every grid row.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    overrides: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(args) => run_generate(args),
        Command::Train(args) => run_train(args),
        Command::Infer(args) => run_infer(args),
        Command::Eval(args) => run_eval(args),
        Command::Ablate(args) => run_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        n_cases: args.cases,
        frames_per_case: args.frames_per_case,
        height: args.height,
        width: args.width,
        hard_fraction: args.hard_fraction,
        test_fraction: args.test_fraction,
        ..SynthConfig::default()
    };
    if let Some(mix) = &args.class_mix {
        let parts: Vec<f64> = mix
            .split(',')
            .map(|p| p.trim().parse::<f64>().context("class-mix entries must be numbers"))
            .collect::<Result<_>>()?;
        let arr: [f64; NUM_CLASSES] = parts
            .try_into()
            .map_err(|_| anyhow::anyhow!("class-mix needs exactly {NUM_CLASSES} weights"))?;
        cfg.class_mix = arr;
    }
    let manifest = generate_synthetic(&cfg, args.seed, &args.out)?;
    let train_cases = manifest.cases.iter().filter(|c| c.role == Role::Train).count();
    let test_cases = manifest.cases.len() - train_cases;
    println!(
        "wrote {} cases ({} train / {} test) of {} frames at {}x{} to {}",
        manifest.cases.len(),
        train_cases,
        test_cases,
        cfg.frames_per_case,
        manifest.height,
        manifest.width,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.overrides.resolve()?;
    if args.no_mdm {
        cfg.mdm_on = false;
    }
    if args.no_trm {
        cfg.trm_on = false;
    }
    if args.no_ass {
        cfg.ass_on = false;
    }
    let summary = train(&cfg, args.seed, &args.data, &args.out)?;
    println!(
        "trained {} epochs / {} steps; log at {}",
        summary.epochs,
        summary.steps,
        summary.log_path.display()
    );
    match (summary.best_epoch, summary.best_dice) {
        (Some(epoch), Some(d)) => println!(
            "best validation Dice {:.3} at epoch {} -> {}",
            d,
            epoch,
            summary.best_checkpoint.display()
        ),
        _ => println!("best checkpoint -> {}", summary.best_checkpoint.display()),
    }
    println!("last checkpoint -> {}", summary.last_checkpoint.display());
    Ok(())
}

fn save_probability(path: &Path, prob: &Array2<f64>) -> Result<()> {
    let (h, w) = prob.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        px.0[0] = (prob[(y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn run_infer(args: InferArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let cfg = &ckpt.config;
    let index = load_dataset(&args.data)?;
    let clip = load_clip(&index, &args.case, args.frame, &cfg.model)?;
    let schedule = cfg.noise_schedule()?;
    let steps = args.steps.unwrap_or(cfg.infer_steps);
    let samples = args.samples.unwrap_or(cfg.infer_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let prob = infer_clip(&ckpt.params, cfg, &schedule, &clip, steps, samples, &mut rng)?;
    let mask = binarize(&prob, 0.5);
    save_mask(&args.out, &mask)?;
    if let Some(path) = &args.prob_out {
        save_probability(path, &prob)?;
    }
    println!(
        "{} frame {} ({} steps, {} sample{}): Dice {:.3}, S {:.3}, E {:.3}, Fw {:.3} -> {}",
        args.case,
        args.frame,
        steps,
        samples,
        if samples == 1 { "" } else { "s" },
        dice(&mask, &clip.mask)?,
        s_measure(&prob, &clip.mask, 0.5)?,
        e_measure_mean(&prob, &clip.mask)?,
        weighted_fbeta(&prob, &clip.mask, 1.0)?,
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let index = load_dataset(&args.data)?;
    let opts = EvalOptions {
        steps: args.steps.unwrap_or(ckpt.config.infer_steps),
        samples: args.samples.unwrap_or(ckpt.config.infer_samples),
        averaging: if args.per_case { Averaging::PerCase } else { Averaging::PerFrame },
        frame_cap: args.frame_cap,
    };
    let (report, frames) = evaluate(&ckpt.params, &ckpt.config, &index, args.seed, &opts)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let csv = report.to_csv();
    fs::write(args.out.join("report.csv"), &csv)?;
    fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut jsonl = String::new();
    for f in &frames {
        jsonl.push_str(&serde_json::to_string(f)?);
        jsonl.push('\n');
    }
    fs::write(args.out.join("frames.jsonl"), jsonl)?;
    print!("{csv}");
    println!("reports written to {}", args.out.display());
    Ok(())
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let outcomes = ablate(&cfg, args.seed, &args.data, &args.out)?;
    println!("model  mdm  trm  ass  S_alpha  E_phi_mn  F_w_beta  Dice   (all-split means)");
    for o in &outcomes {
        let mark = |on: bool| if on { "+" } else { "-" };
        let all = o
            .report
            .row("all")
            .context("ablation report lacks the pooled split")?;
        println!(
            "{:<5}  {:^3}  {:^3}  {:^3}  {:.3}    {:.3}     {:.3}     {:.3}",
            o.row.name,
            mark(o.row.mdm),
            mark(o.row.trm),
            mark(o.row.ass),
            all.s_alpha,
            all.e_phi_mn,
            all.f_w_beta,
            all.dice
        );
    }
    println!("per-split table -> {}", args.out.join("ablation.csv").display());
    Ok(())
}
