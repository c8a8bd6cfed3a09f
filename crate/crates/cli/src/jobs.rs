//! Fully resolved subcommand invocations. A [`Job`] holds every value that
//! influences its outputs, so storing it in the run manifest is enough to
//! re-execute the run.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use vaesr_core::degradation::{degrade, derive_seed, DegradationSpec};
use vaesr_core::imaging::{list_pngs, load_image, quantize, save_image, Image};
use vaesr_core::metrics::evaluate_corpus;
use vaesr_core::models::{denoise_inference, super_resolve, LatentMode, STRIDE};
use vaesr_core::training::{train_with, write_atomic, write_log, Checkpoint, DatasetHandle, TrainConfig};
use vaesr_core::Error;

use crate::plot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InferMode {
    Denoise,
    Sr,
    #[value(name = "denoise+sr")]
    #[serde(rename = "denoise+sr")]
    DenoiseSr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Job {
    Degrade { input: PathBuf, spec: DegradationSpec },
    Train { config: TrainConfig, resume: Option<PathBuf> },
    Infer { checkpoint: PathBuf, input: PathBuf, mode: InferMode, latent_seed: Option<u64> },
    Evaluate { pred: PathBuf, reference: PathBuf },
    Compare { dirs: Vec<PathBuf> },
}

/// What a job produced.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Per-file failures; the remaining files were still processed.
    pub file_errors: Vec<String>,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Degrade { .. } => "degrade",
            Job::Train { .. } => "train",
            Job::Infer { .. } => "infer",
            Job::Evaluate { .. } => "evaluate",
            Job::Compare { .. } => "compare",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Degrade { spec, .. } => Some(spec.seed),
            Job::Train { config, .. } => Some(config.seed),
            Job::Infer { latent_seed, .. } => *latent_seed,
            _ => None,
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Job::Degrade { input, .. } => vec![input.clone()],
            Job::Train { config, resume } => {
                config.source_dir.iter().chain(&config.target_dir).chain(resume).cloned().collect()
            }
            Job::Infer { checkpoint, input, .. } => vec![checkpoint.clone(), input.clone()],
            Job::Evaluate { pred, reference } => vec![pred.clone(), reference.clone()],
            Job::Compare { dirs } => dirs.clone(),
        }
    }

    pub fn run(&self, out: &Path) -> Result<Outcome> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        match self {
            Job::Degrade { input, spec } => run_degrade(input, spec, out),
            Job::Train { config, resume } => run_train(config, resume.as_deref(), out),
            Job::Infer { checkpoint, input, mode, latent_seed } => {
                run_infer(checkpoint, input, *mode, *latent_seed, out)
            }
            Job::Evaluate { pred, reference } => run_evaluate(pred, reference, out),
            Job::Compare { dirs } => run_compare(dirs, out),
        }
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn non_empty_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        bail!("no PNG files in {}", dir.display());
    }
    Ok(files)
}

/// Apply `f` to every PNG in `input`, writing same-named outputs.
fn map_files(input: &Path, out: &Path, f: impl Fn(&str, Image) -> vaesr_core::Result<Image>) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    for path in non_empty_pngs(input)? {
        let name = file_name(&path);
        let result = load_image(&path).and_then(|img| f(&name, img)).and_then(|img| save_image(&img, out.join(&name)));
        match result {
            Ok(()) => outcome.outputs.push(name),
            Err(e) => outcome.file_errors.push(format!("{name}: {e}")),
        }
    }
    Ok(outcome)
}

fn run_degrade(input: &Path, spec: &DegradationSpec, out: &Path) -> Result<Outcome> {
    spec.validate()?;
    map_files(input, out, |name, img| degrade(&img, &DegradationSpec { seed: derive_seed(spec.seed, name), ..spec.clone() }))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).with_context(|| format!("writing {}", path.display()))
}

fn run_train(config: &TrainConfig, resume: Option<&Path>, out: &Path) -> Result<Outcome> {
    config.validate()?;
    let start = resume.map(|p| Checkpoint::load_for(p, &config.model)).transpose()?;
    let ds = DatasetHandle::open(config.source_dir.as_deref(), config.target_dir.as_deref())?;
    let total = config.iterations;
    let mut done = 0;
    let mut progress = |r: &vaesr_core::training::LogRecord| {
        done += 1;
        if done % 100 == 0 || done == total {
            eprintln!("[{}] iteration {} ({done}/{total}) total loss {:.6}", r.phase.name(), r.iteration, r.losses.total);
        }
    };
    let ck = match train_with(&ds, config, start, &mut progress) {
        Ok(ck) => ck,
        Err(Error::Diverged(d)) => {
            d.last_good.save(out.join("last_good.ckpt"))?;
            let mut lines = Vec::new();
            write_log(&d.recent, &mut lines)?;
            write_atomic(&out.join("divergence.jsonl"), &lines)?;
            bail!(
                "training diverged at iteration {}: {}; last good state in {}",
                d.iteration,
                d.reason,
                out.join("last_good.ckpt").display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    ck.save(out.join("checkpoint.ckpt"))?;
    let mut log = BufWriter::new(File::create(out.join("loss_log.jsonl"))?);
    write_log(&ck.meta.history, &mut log)?;
    drop(log);
    let stored = ck.meta.config.clone().unwrap_or_else(|| config.clone());
    write_atomic(&out.join("config.toml"), stored.to_toml().as_bytes())?;
    save_png(&plot::loss_curves(&ck.meta.history), &out.join("loss_curve.png"))?;
    Ok(Outcome {
        outputs: ["checkpoint.ckpt", "loss_log.jsonl", "config.toml", "loss_curve.png"].map(String::from).to_vec(),
        file_errors: Vec::new(),
    })
}

fn run_infer(checkpoint: &Path, input: &Path, mode: InferMode, latent_seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params;
    let alpha = params.config().alpha;
    let latent = latent_seed.map_or(LatentMode::PriorMean, LatentMode::PriorSample);
    // Replicate-pad to the decoder stride, then crop back.
    let denoise = |img: &Image| -> vaesr_core::Result<Image> {
        let (h, w) = img.dims();
        denoise_inference(&img.pad_to_multiple(STRIDE), &params, latent)?.crop(0, 0, h, w)
    };
    map_files(input, out, |_, img| match mode {
        InferMode::Denoise => denoise(&img),
        InferMode::Sr => super_resolve(&img, &params, alpha),
        InferMode::DenoiseSr => super_resolve(&denoise(&img)?, &params, alpha),
    })
}

fn run_evaluate(pred: &Path, reference: &Path, out: &Path) -> Result<Outcome> {
    let report = evaluate_corpus(pred, reference)?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    let summary = serde_json::json!({
        "files": report.rows.len(),
        "mean_psnr_y": report.mean_psnr_y,
        "mean_psnr_rgb": report.mean_psnr_rgb,
        "mean_ssim": report.mean_ssim,
    });
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let psnr: Vec<f64> = report.rows.iter().map(|r| r.psnr_y).collect();
    save_png(&plot::bar_chart(&psnr), &out.join("psnr_y.png"))?;
    println!(
        "{} files: mean PSNR-Y {:.3} dB, PSNR-RGB {:.3} dB, SSIM {:.4}",
        report.rows.len(),
        report.mean_psnr_y,
        report.mean_psnr_rgb,
        report.mean_ssim
    );
    Ok(Outcome {
        outputs: ["report.csv", "summary.json", "psnr_y.png"].map(String::from).to_vec(),
        file_errors: Vec::new(),
    })
}

/// Nearest-neighbour resize to height `h`, keeping the aspect ratio.
fn to_height(img: &Image, h: usize) -> Image {
    let w = ((img.width() * h) as f64 / img.height() as f64).round().max(1.0) as usize;
    Image::from_fn(h, w, |y, x, c| img.get(y * img.height() / h, x * img.width() / w, c))
}

const GAP: u32 = 4;

fn run_compare(dirs: &[PathBuf], out: &Path) -> Result<Outcome> {
    let Some(first) = dirs.first() else { bail!("compare needs at least one directory") };
    let mut outcome = Outcome::default();
    for path in non_empty_pngs(first)? {
        let name = file_name(&path);
        let panels: vaesr_core::Result<Vec<Image>> = dirs.iter().map(|d| load_image(d.join(&name))).collect();
        let panels = match panels {
            Ok(p) => p,
            Err(e) => {
                outcome.file_errors.push(format!("{name}: {e}"));
                continue;
            }
        };
        let h = panels.iter().map(Image::height).max().unwrap_or(1);
        let panels: Vec<Image> = panels.iter().map(|p| to_height(p, h)).collect();
        let width = panels.iter().map(|p| p.width() as u32).sum::<u32>() + GAP * (panels.len() as u32 - 1);
        let mut canvas = RgbImage::from_pixel(width, h as u32, image::Rgb([255, 255, 255]));
        let mut left = 0;
        for p in &panels {
            for y in 0..p.height() {
                for x in 0..p.width() {
                    let px = [0, 1, 2].map(|c| quantize(p.get(y, x, c)));
                    canvas.put_pixel(left + x as u32, y as u32, image::Rgb(px));
                }
            }
            left += p.width() as u32 + GAP;
        }
        save_png(&canvas, &out.join(&name))?;
        outcome.outputs.push(name);
    }
    Ok(outcome)
}
