use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vaesr_core::training::write_atomic;

use crate::jobs::{Job, Outcome};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Record written next to every output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub job: Job,
    pub artifacts: Vec<Artifact>,
    pub file_errors: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn record(job: &Job, out: &Path, outcome: &Outcome) -> Result<Self> {
        let artifacts = outcome
            .outputs
            .iter()
            .map(|p| Ok(Artifact { path: p.clone(), sha256: sha256_file(&out.join(p))? }))
            .collect::<Result<_>>()?;
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: job.name().to_string(),
            seed: job.seed(),
            inputs: job.inputs(),
            output_dir: out.to_path_buf(),
            job: job.clone(),
            artifacts,
            file_errors: outcome.file_errors.clone(),
        })
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&out.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
