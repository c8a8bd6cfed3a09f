use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::degradation::DegradationSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{ModelConfig, STRIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Denoiser pre-training.
    Dae,
    /// SRSN and discriminator training against a frozen denoiser.
    Sr,
    /// Denoiser, SRSN and discriminator trained together.
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Dae => "dae",
            Phase::Sr => "sr",
            Phase::Joint => "joint",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Phase::Dae => 1,
            Phase::Sr => 2,
            Phase::Joint => 3,
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dae" => Ok(Phase::Dae),
            "sr" => Ok(Phase::Sr),
            "joint" => Ok(Phase::Joint),
            other => Err(Error::Config(format!("unknown phase `{other}` (expected dae, sr or joint)"))),
        }
    }
}

/// Where the denoiser's clean targets and encoder references come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Targets are clean crops from `target_dir`; inputs are their degraded
    /// copies and the encoder sees the target.
    SyntheticPaired,
    /// Inputs are crops from `source_dir`; the encoder sees an independent
    /// clean crop and the reconstruction is measured against the input.
    UnpairedReference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
    pub adam_beta1: f64,
    pub weight_decay: f64,
    pub lr_patch: usize,
    pub ref_patch: usize,
    pub alpha: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub phase: Phase,
    pub pairing: Pairing,
    /// Degraded / LR-domain images.
    pub source_dir: Option<PathBuf>,
    /// Clean reference-domain images.
    pub target_dir: Option<PathBuf>,
    /// Synthetic degradation for paired denoiser training; `scale` must be 1.
    pub degradation: DegradationSpec,
    /// Also update the decoder during the SR phase.
    pub train_decoder: bool,
    /// Use `-log D(fake)` instead of `log(1 - D(fake))` for the generator.
    pub non_saturating: bool,
    pub decoupled_weight_decay: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-4,
            batch: 4,
            iterations: 2000,
            adam_beta1: 0.9,
            weight_decay: 1e-4,
            lr_patch: 32,
            ref_patch: 128,
            alpha: 4,
            weights: LossWeights::default(),
            seed: 0,
            phase: Phase::Dae,
            pairing: Pairing::SyntheticPaired,
            source_dir: None,
            target_dir: None,
            degradation: DegradationSpec::default(),
            train_decoder: false,
            non_saturating: false,
            decoupled_weight_decay: false,
            model: ModelConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            batch: 16,
            iterations: 1_000_000,
            lr_patch: 128,
            ref_patch: 512,
            degradation: DegradationSpec { noise_sigma: 15.0 / 255.0, ..DegradationSpec::default() },
            model: ModelConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    /// Parse a TOML document; keys absent from the document keep the desk
    /// defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml_strict(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            problems.push(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch == 0 {
            problems.push("batch must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            problems.push(format!("adam_beta1 must be in [0, 1), got {}", self.adam_beta1));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.lr_patch == 0 || self.lr_patch % STRIDE != 0 {
            problems.push(format!("lr_patch must be a positive multiple of {STRIDE}, got {}", self.lr_patch));
        }
        if self.ref_patch < STRIDE {
            problems.push(format!("ref_patch must be >= {STRIDE}, got {}", self.ref_patch));
        }
        if self.alpha != self.model.alpha {
            problems.push(format!("alpha ({}) differs from model.alpha ({})", self.alpha, self.model.alpha));
        }
        if self.degradation.scale != 1 {
            problems.push("degradation.scale must be 1 for denoiser training".to_string());
        }
        for check in [self.weights.validate(), self.degradation.validate(), self.model.validate()] {
            if let Err(e) = check {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Deserialize TOML, rejecting the document if it contains any key the
/// target type does not know. Every unknown key is named in the error.
pub fn parse_toml_strict<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    let value: T = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Config(e.to_string()))?;
    if unknown.is_empty() {
        Ok(value)
    } else {
        Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::desk().validate().unwrap();
        TrainConfig::paper().validate().unwrap();
        assert_eq!(TrainConfig::paper().lr_patch, 128);
        assert_eq!(TrainConfig::desk().batch, 4);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig { seed: 17, phase: Phase::Sr, ..TrainConfig::desk() };
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_keep_defaults() {
        let cfg = TrainConfig::from_toml("iterations = 7\n[weights]\neta_adv = 0.0\n").unwrap();
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.weights.eta_adv, 0.0);
        assert_eq!(cfg.weights.lambda_feat, 1.0);
        assert_eq!(cfg.lr, 1e-4);
    }

    #[test]
    fn every_unknown_key_is_named() {
        let err = TrainConfig::from_toml("iterashuns = 3\nlr = 0.1\n[model]\nlatent = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("iterashuns") && msg.contains("model.latent"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_toml("lr_patch = 40").is_err());
        assert!(TrainConfig::from_toml("alpha = 2").is_err());
        assert!(TrainConfig::from_toml("[degradation]\nscale = 4").is_err());
        assert!(TrainConfig::from_toml("phase = \"warmup\"").is_err());
    }
}
