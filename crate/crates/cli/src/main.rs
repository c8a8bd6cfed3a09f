//! `vaesr`: degrade corpora, train, run inference, evaluate and compare.

mod jobs;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use vaesr_core::degradation::DegradationSpec;
use vaesr_core::training::{Pairing, Phase, TrainConfig};

use jobs::{InferMode, Job};
use manifest::{RunManifest, MANIFEST_NAME};

#[derive(Parser)]
#[command(name = "vaesr", version, about = "Joint blind denoising and unsupervised super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur, downscale and add noise to every PNG in a directory.
    Degrade(DegradeArgs),
    /// Run one training phase.
    Train(TrainArgs),
    /// Denoise and/or super-resolve every PNG in a directory.
    Infer(InferArgs),
    /// PSNR / SSIM of predictions against same-named references.
    Evaluate(EvaluateArgs),
    /// Side-by-side panels of same-named images from several directories.
    Compare(CompareArgs),
    /// Re-execute a run from its manifest and verify the output checksums.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    blur_sigma: f64,
    /// Noise standard deviation in [0, 1] intensity units.
    #[arg(long, default_value_t = 25.0 / 255.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with `TrainConfig` keys; absent keys keep the desk defaults.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// `desk` (default) or `paper`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to resume (same phase) or to start a new phase from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// Flags named after the config keys they override.
#[derive(Args)]
struct TrainOverrides {
    #[arg(long, value_parser = kebab::<Phase>)]
    phase: Option<Phase>,
    #[arg(long, value_parser = kebab::<Pairing>)]
    pairing: Option<Pairing>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lr_patch: Option<usize>,
    #[arg(long)]
    ref_patch: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    source_dir: Option<PathBuf>,
    #[arg(long)]
    target_dir: Option<PathBuf>,
    #[arg(long)]
    lambda_feat: Option<f64>,
    #[arg(long)]
    eta_adv: Option<f64>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    degradation_seed: Option<u64>,
    #[arg(long)]
    train_decoder: Option<bool>,
    #[arg(long)]
    non_saturating: Option<bool>,
    #[arg(long)]
    decoupled_weight_decay: Option<bool>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "denoise+sr")]
    mode: InferMode,
    /// Sample the latent code from the prior with this seed instead of
    /// using the prior mean.
    #[arg(long)]
    latent_seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Directory receiving report.csv, summary.json and psnr_y.png.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    manifest: PathBuf,
    /// Fresh directory for the reproduced outputs.
    #[arg(long)]
    out: PathBuf,
}

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn resolve_train(args: &TrainArgs) -> Result<Job> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::preset(args.preset.as_deref().unwrap_or("desk"))?,
    };
    let o = &args.overrides;
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = o.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    set!(
        phase => phase, pairing => pairing, lr => lr, batch => batch, iterations => iterations,
        adam_beta1 => adam_beta1, weight_decay => weight_decay, lr_patch => lr_patch, ref_patch => ref_patch,
        seed => seed, lambda_feat => weights.lambda_feat, eta_adv => weights.eta_adv,
        kl_weight => weights.kl_weight, blur_sigma => degradation.blur_sigma,
        noise_sigma => degradation.noise_sigma, degradation_seed => degradation.seed,
        train_decoder => train_decoder, non_saturating => non_saturating,
        decoupled_weight_decay => decoupled_weight_decay,
    );
    if let Some(alpha) = o.alpha {
        cfg.alpha = alpha;
        cfg.model.alpha = alpha;
    }
    if let Some(dir) = &o.source_dir {
        cfg.source_dir = Some(dir.clone());
    }
    if let Some(dir) = &o.target_dir {
        cfg.target_dir = Some(dir.clone());
    }
    cfg.source_dir = cfg.source_dir.as_deref().map(absolute).transpose()?;
    cfg.target_dir = cfg.target_dir.as_deref().map(absolute).transpose()?;
    cfg.validate()?;
    Ok(Job::Train { config: cfg, resume: args.resume.as_deref().map(absolute).transpose()? })
}

fn execute(job: &Job, out: &Path) -> Result<RunManifest> {
    let outcome = job.run(out)?;
    let manifest = RunManifest::record(job, &absolute(out)?, &outcome)?;
    manifest.save(out)?;
    Ok(manifest)
}

fn run(cli: Cli) -> Result<bool> {
    let (job, out) = match cli.command {
        Command::Degrade(a) => {
            let spec = DegradationSpec { blur_sigma: a.blur_sigma, scale: a.scale, noise_sigma: a.noise_sigma, seed: a.seed };
            (Job::Degrade { input: absolute(&a.input)?, spec }, a.out)
        }
        Command::Train(ref a) => (resolve_train(a)?, a.out.clone()),
        Command::Infer(a) => (
            Job::Infer {
                checkpoint: absolute(&a.checkpoint)?,
                input: absolute(&a.input)?,
                mode: a.mode,
                latent_seed: a.latent_seed,
            },
            a.out,
        ),
        Command::Evaluate(a) => {
            (Job::Evaluate { pred: absolute(&a.pred)?, reference: absolute(&a.reference)? }, a.out)
        }
        Command::Compare(a) => {
            (Job::Compare { dirs: a.dirs.iter().map(|d| absolute(d)).collect::<Result<_>>()? }, a.out)
        }
        Command::Rerun(a) => return rerun(&a),
    };
    let manifest = execute(&job, &out)?;
    for e in &manifest.file_errors {
        eprintln!("error: {e}");
    }
    eprintln!("{}: {} outputs in {}", manifest.subcommand, manifest.artifacts.len(), out.display());
    Ok(manifest.file_errors.is_empty())
}

fn rerun(args: &RerunArgs) -> Result<bool> {
    let original = RunManifest::load(&args.manifest)?;
    if args.out.join(MANIFEST_NAME).exists() {
        bail!("{} already holds a run; choose a fresh directory", args.out.display());
    }
    let again = execute(&original.job, &args.out)?;
    let mut ok = again.file_errors == original.file_errors;
    if again.artifacts.len() != original.artifacts.len() {
        eprintln!("artifact count differs: {} vs {}", again.artifacts.len(), original.artifacts.len());
        ok = false;
    }
    for want in &original.artifacts {
        match again.artifacts.iter().find(|a| a.path == want.path) {
            Some(got) if got.sha256 == want.sha256 => {}
            Some(_) => {
                eprintln!("checksum mismatch: {}", want.path);
                ok = false;
            }
            None => {
                eprintln!("missing artifact: {}", want.path);
                ok = false;
            }
        }
    }
    eprintln!("rerun of {}: {}", original.subcommand, if ok { "all checksums match" } else { "MISMATCH" });
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
