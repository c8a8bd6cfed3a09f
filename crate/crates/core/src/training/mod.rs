//! Patch sampling, the denoiser / super-resolution / joint training phases,
//! the optimizer and checkpoints.
//!
//! Every random draw of iteration `i` is seeded from
//! `(cfg.seed, phase, i, purpose, sample)`, so no RNG state has to be
//! carried between iterations and a resumed run replays exactly the
//! sequence an uninterrupted run would have seen.

mod adam;
mod checkpoint;
mod config;
mod dataset;
mod log;

pub use adam::{AdamConfig, AdamSlot, AdamState};
pub use checkpoint::{write_atomic, Checkpoint, TrainMeta, FORMAT_VERSION};
pub use config::{parse_toml_strict, Pairing, Phase, TrainConfig};
pub use dataset::{DatasetHandle, Domain, Patch};
pub use log::{moving_average, read_log, write_log, DiscriminatorStats, LogRecord};

use vaesr_autograd::{Gradients, Tensor, Var};

use crate::degradation::{degrade, mix_seed, DegradationSpec};
use crate::error::{Error, Result};
use crate::imaging::{images_to_tensor, Image};
use crate::losses::{
    adversarial_loss_generator, adversarial_loss_generator_non_saturating, cycle_loss, discriminator_loss,
    feature_loss, kl_var, mae_var, LossBreakdown,
};
use crate::models::{is_trainable_under, networks, reparameterize, standard_normal, ArraySpec, Bound, Network, ParameterSet};

/// State handed back when training stops on a non-finite value.
#[derive(Debug)]
pub struct Divergence {
    pub iteration: usize,
    pub reason: String,
    /// Up to ten most recent records, the failing one last.
    pub recent: Vec<LogRecord>,
    /// Parameters and optimizer state before the failing iteration.
    pub last_good: Checkpoint,
}

const PURPOSE_TARGET: u64 = 1;
const PURPOSE_NOISE: u64 = 2;
const PURPOSE_EPS: u64 = 3;
const PURPOSE_REFERENCE: u64 = 4;
const PURPOSE_SOURCE: u64 = 5;
const PURPOSE_REAL: u64 = 6;

/// Denoiser pre-training from a fresh initialization.
pub fn train_dae(ds: &DatasetHandle, cfg: &TrainConfig) -> Result<Checkpoint> {
    if cfg.phase != Phase::Dae {
        return Err(Error::Config(format!("train_dae called with phase {}", cfg.phase.name())));
    }
    train(ds, cfg, None)
}

/// SR training on top of a trained denoiser.
pub fn train_sr(ds: &DatasetHandle, cfg: &TrainConfig, dae: Checkpoint) -> Result<Checkpoint> {
    if cfg.phase != Phase::Sr {
        return Err(Error::Config(format!("train_sr called with phase {}", cfg.phase.name())));
    }
    train(ds, cfg, Some(dae))
}

/// Run `cfg.iterations` iterations of `cfg.phase`.
///
/// If `start` was produced by the same phase, training resumes after its
/// last iteration with its optimizer state and history. Otherwise its
/// parameters seed a new phase starting at iteration 0.
pub fn train(ds: &DatasetHandle, cfg: &TrainConfig, start: Option<Checkpoint>) -> Result<Checkpoint> {
    train_with(ds, cfg, start, &mut |_| {})
}

/// [`train`] with a callback invoked after every completed iteration.
pub fn train_with(
    ds: &DatasetHandle,
    cfg: &TrainConfig,
    start: Option<Checkpoint>,
    on_record: &mut dyn FnMut(&LogRecord),
) -> Result<Checkpoint> {
    let mut ck = prepare(cfg, start)?;
    match (cfg.phase, cfg.pairing) {
        (Phase::Dae, Pairing::SyntheticPaired) => ds.require(Domain::Target, "paired denoiser training")?,
        (Phase::Dae, Pairing::UnpairedReference) => {
            ds.require(Domain::Source, "unpaired denoiser training")?;
            ds.require(Domain::Target, "unpaired denoiser training")?;
        }
        (Phase::Sr | Phase::Joint, _) => {
            ds.require(Domain::Source, "SR training")?;
            ds.require(Domain::Target, "SR training")?;
        }
    }
    let adam = AdamConfig::new(cfg.lr, cfg.adam_beta1, cfg.weight_decay, cfg.decoupled_weight_decay);
    let first = ck.meta.iteration + 1;
    for it in first..first + cfg.iterations {
        let step = match cfg.phase {
            Phase::Dae => dae_step(ds, cfg, &ck.params, it),
            Phase::Sr | Phase::Joint => sr_step(ds, cfg, &ck.params, it),
        }?;
        if let Some(reason) = step.problem() {
            let mut recent: Vec<_> = ck.meta.history.iter().rev().take(9).rev().cloned().collect();
            recent.push(step.record);
            return Err(Error::Diverged(Box::new(Divergence { iteration: it, reason, recent, last_good: ck })));
        }
        for (i, grad) in &step.updates {
            let name = ck.params.entries()[*i].spec.name.clone();
            ck.optimizer.step(&adam, &name, ck.params.tensor_mut(*i), grad)?;
        }
        ck.meta.iteration = it;
        on_record(&step.record);
        ck.meta.history.push(step.record);
    }
    // Record the cumulative count so a split run stores the same config as
    // an uninterrupted one.
    if let Some(stored) = ck.meta.config.as_mut() {
        stored.iterations = ck.meta.iteration;
    }
    Ok(ck)
}

fn prepare(cfg: &TrainConfig, start: Option<Checkpoint>) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut ck = match start {
        None if cfg.phase == Phase::Sr => {
            return Err(Error::Config("the sr phase starts from a denoiser checkpoint".into()));
        }
        None => Checkpoint::fresh(ParameterSet::init(&cfg.model, cfg.seed)?, cfg.seed),
        Some(ck) => {
            if ck.params.config() != &cfg.model {
                let arrays = ck.params.entries().iter().map(|e| (e.spec.name.clone(), e.tensor.clone())).collect();
                ParameterSet::<f32>::from_arrays(&cfg.model, arrays)?;
                return Err(Error::Config("checkpoint model config differs from the training config".into()));
            }
            if ck.meta.phase == Some(cfg.phase) {
                if ck.meta.seed != cfg.seed {
                    return Err(Error::Config(format!(
                        "cannot resume: checkpoint seed {} differs from config seed {}",
                        ck.meta.seed, cfg.seed
                    )));
                }
                ck
            } else {
                Checkpoint::fresh(ck.params, cfg.seed)
            }
        }
    };
    ck.meta.phase = Some(cfg.phase);
    ck.meta.seed = cfg.seed;
    ck.meta.config = Some(cfg.clone());
    Ok(ck)
}

struct Step {
    record: LogRecord,
    /// Gradient for each parameter index that the iteration updates.
    updates: Vec<(usize, Tensor<f32>)>,
}

impl Step {
    fn problem(&self) -> Option<String> {
        if !self.record.losses.all_finite() {
            return Some(format!("non-finite loss {:?}", self.record.losses));
        }
        if let Some(d) = self.record.discriminator {
            if !(d.loss.is_finite() && d.d_real.is_finite() && d.d_fake.is_finite()) {
                return Some(format!("non-finite discriminator statistics {d:?}"));
            }
        }
        self.updates.iter().find(|(_, g)| !g.all_finite()).map(|(i, _)| format!("non-finite gradient for array #{i}"))
    }
}

fn seed_for(cfg: &TrainConfig, it: usize, purpose: u64, sample: usize) -> u64 {
    mix_seed(cfg.seed, &[cfg.phase.tag(), it as u64, purpose, sample as u64])
}

fn constant_batch(images: &[Image]) -> Var<f32> {
    Var::constant(images_to_tensor(images))
}

fn take_grads(bound: &Bound<f32>, grads: &mut Gradients<f32>) -> Vec<(usize, Tensor<f32>)> {
    bound
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.requires_grad())
        .filter_map(|(i, v)| grads.remove(v).map(|g| (i, g)))
        .collect()
}

fn value(v: &Var<f32>) -> f64 {
    v.value().item() as f64
}

/// Inputs of the denoiser objective for one iteration.
struct DaeBatch {
    noisy: Var<f32>,
    target: Var<f32>,
    reference: Var<f32>,
    eps: Tensor<f32>,
}

fn dae_batch(ds: &DatasetHandle, cfg: &TrainConfig, it: usize) -> Result<DaeBatch> {
    let size = cfg.lr_patch;
    let (mut noisy, mut target, mut reference) = (Vec::new(), Vec::new(), Vec::new());
    for b in 0..cfg.batch {
        match cfg.pairing {
            Pairing::SyntheticPaired => {
                let clean = ds.sample_reference_patch(size, size, seed_for(cfg, it, PURPOSE_TARGET, b))?.image;
                let spec = DegradationSpec {
                    scale: 1,
                    seed: mix_seed(cfg.degradation.seed, &[seed_for(cfg, it, PURPOSE_NOISE, b)]),
                    ..cfg.degradation.clone()
                };
                noisy.push(degrade(&clean, &spec)?);
                reference.push(clean.clone());
                target.push(clean);
            }
            Pairing::UnpairedReference => {
                let x = ds.sample_lr_patch(size, seed_for(cfg, it, PURPOSE_SOURCE, b))?.image;
                let r = cfg.ref_patch;
                reference.push(ds.sample_reference_patch(r, r, seed_for(cfg, it, PURPOSE_REFERENCE, b))?.image);
                target.push(x.clone());
                noisy.push(x);
            }
        }
    }
    let l = cfg.model.latent_len;
    let eps = standard_normal(cfg.batch * l, seed_for(cfg, it, PURPOSE_EPS, 0));
    Ok(DaeBatch {
        noisy: constant_batch(&noisy),
        target: constant_batch(&target),
        reference: constant_batch(&reference),
        eps: Tensor::new([cfg.batch, l], eps.into_iter().map(|v| v as f32).collect()),
    })
}

/// Denoiser objective; returns the graph total and the unweighted parts.
fn dae_objective(cfg: &TrainConfig, p: &Bound<f32>, batch: DaeBatch) -> Result<(Var<f32>, LossBreakdown)> {
    let (mean, log_variance) = networks::encoder(p, &batch.reference)?;
    let z = reparameterize(&mean, &log_variance, batch.eps);
    let noise = networks::decoder(&cfg.model, p, &batch.noisy, &z)?;
    let denoised = batch.noisy.sub(&noise);
    let reconstruction = mae_var(&denoised, &batch.target);
    let kl = kl_var(&mean, &log_variance);
    let total = reconstruction.add(&kl.scale(cfg.weights.kl_weight));
    let parts = LossBreakdown { kl: value(&kl), reconstruction: value(&reconstruction), ..Default::default() };
    Ok((total, parts))
}

fn dae_trainable(cfg: &TrainConfig) -> impl Fn(&ArraySpec) -> bool + '_ {
    move |s| match s.network {
        Network::Encoder => is_trainable_under(s, cfg.model.encoder_kind),
        Network::Decoder => true,
        _ => false,
    }
}

fn dae_step(ds: &DatasetHandle, cfg: &TrainConfig, params: &ParameterSet<f32>, it: usize) -> Result<Step> {
    let bound = params.bind(dae_trainable(cfg));
    let (total, parts) = dae_objective(cfg, &bound, dae_batch(ds, cfg, it)?)?;
    let mut grads = total.backward();
    Ok(Step {
        record: LogRecord {
            iteration: it,
            phase: cfg.phase,
            losses: parts.with_total(&cfg.weights),
            discriminator: None,
        },
        updates: take_grads(&bound, &mut grads),
    })
}

/// One SR (or joint) iteration: a generator step and a discriminator step,
/// both computed from the parameters at the start of the iteration.
fn sr_step(ds: &DatasetHandle, cfg: &TrainConfig, params: &ParameterSet<f32>, it: usize) -> Result<Step> {
    let joint = cfg.phase == Phase::Joint;
    let (size, alpha) = (cfg.lr_patch, cfg.alpha);
    let lr: Vec<Image> = (0..cfg.batch)
        .map(|b| ds.sample_lr_patch(size, seed_for(cfg, it, PURPOSE_SOURCE, b)).map(|p| p.image))
        .collect::<Result<_>>()?;
    let x = constant_batch(&lr);

    let gen = params.bind(|s| match s.network {
        Network::Srsn => true,
        Network::Decoder => joint || cfg.train_decoder,
        Network::Encoder => joint && is_trainable_under(s, cfg.model.encoder_kind),
        _ => false,
    });
    let zero_z = Var::constant(Tensor::zeros([cfg.batch, cfg.model.latent_len]));
    let g = |v: &Var<f32>| Ok(v.sub(&networks::decoder(&cfg.model, &gen, v, &zero_z)?));
    let f = |v: &Var<f32>| networks::srsn(&cfg.model, &gen, v);
    let cycle = cycle_loss(&x, f, g, alpha)?;

    // Terms with zero weight are still measured for the log, on detached inputs.
    let (w_feat, w_adv) = (cfg.weights.lambda_feat, cfg.weights.eta_adv);
    let detach_if = |v: &Var<f32>, w: f64| if w > 0.0 { v.clone() } else { v.detach() };
    let feature = feature_loss(
        &detach_if(&cycle.sr, w_feat),
        &detach_if(&cycle.denoised, w_feat),
        |v| networks::features(&gen, v),
        alpha,
    )?;
    let d_on_fake = networks::discriminator(&gen, &detach_if(&cycle.sr, w_adv))?;
    let adversarial = if cfg.non_saturating {
        adversarial_loss_generator_non_saturating(&d_on_fake)
    } else {
        adversarial_loss_generator(&d_on_fake)
    };

    let mut total = cycle.lowfreq.add(&cycle.backproj);
    if w_feat > 0.0 {
        total = total.add(&feature.scale(w_feat));
    }
    if w_adv > 0.0 {
        total = total.add(&adversarial.scale(w_adv));
    }
    let mut parts = LossBreakdown {
        cycle_lowfreq: value(&cycle.lowfreq),
        cycle_backproj: value(&cycle.backproj),
        feature: value(&feature),
        adversarial: value(&adversarial),
        ..Default::default()
    };
    if joint {
        let (dae_total, dae_parts) = dae_objective(cfg, &gen, dae_batch(ds, cfg, it)?)?;
        total = total.add(&dae_total);
        parts.kl = dae_parts.kl;
        parts.reconstruction = dae_parts.reconstruction;
    }
    let mut grads = total.backward();
    let mut updates = take_grads(&gen, &mut grads);
    drop(grads);

    let real: Vec<Image> = (0..cfg.batch)
        .map(|b| {
            ds.sample_reference_patch(alpha * size, alpha * size, seed_for(cfg, it, PURPOSE_REAL, b)).map(|p| p.image)
        })
        .collect::<Result<_>>()?;
    let disc = params.bind(|s| s.network == Network::Discriminator);
    let d_real = networks::discriminator(&disc, &constant_batch(&real))?;
    let d_fake = networks::discriminator(&disc, &cycle.sr.detach())?;
    let d_loss = discriminator_loss(&d_real, &d_fake);
    let mean = |v: &Var<f32>| v.value().data().iter().map(|&p| p as f64).sum::<f64>() / v.value().len() as f64;
    let stats = DiscriminatorStats { d_real: mean(&d_real), d_fake: mean(&d_fake), loss: value(&d_loss) };
    let mut d_grads = d_loss.backward();
    updates.extend(take_grads(&disc, &mut d_grads));

    Ok(Step {
        record: LogRecord {
            iteration: it,
            phase: cfg.phase,
            losses: parts.with_total(&cfg.weights),
            discriminator: Some(stats),
        },
        updates,
    })
}
