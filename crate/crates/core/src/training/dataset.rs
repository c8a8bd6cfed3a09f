use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{list_pngs, load_image, Image};

/// Source (degraded) and target (clean) image domains, loaded eagerly.
#[derive(Clone, Debug, Default)]
pub struct DatasetHandle {
    source: Vec<(PathBuf, Image)>,
    target: Vec<(PathBuf, Image)>,
}

/// A crop together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: Image,
    pub source_index: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl DatasetHandle {
    /// Load every PNG in the given directories.
    pub fn open(source_dir: Option<&Path>, target_dir: Option<&Path>) -> Result<Self> {
        let load = |dir: Option<&Path>| -> Result<Vec<(PathBuf, Image)>> {
            let Some(dir) = dir else { return Ok(Vec::new()) };
            let files = list_pngs(dir)?;
            if files.is_empty() {
                return Err(Error::Dataset(format!("no PNG files in {}", dir.display())));
            }
            files.into_iter().map(|p| load_image(&p).map(|img| (p, img))).collect()
        };
        Ok(Self { source: load(source_dir)?, target: load(target_dir)? })
    }

    pub fn from_images(source: Vec<Image>, target: Vec<Image>) -> Self {
        let named = |v: Vec<Image>, tag: &str| {
            v.into_iter().enumerate().map(|(i, img)| (PathBuf::from(format!("{tag}{i}")), img)).collect()
        };
        Self { source: named(source, "source"), target: named(target, "target") }
    }

    pub fn manifest(&self, domain: Domain) -> Vec<&Path> {
        self.images(domain).iter().map(|(p, _)| p.as_path()).collect()
    }

    pub fn images(&self, domain: Domain) -> &[(PathBuf, Image)] {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub(crate) fn require(&self, domain: Domain, why: &str) -> Result<()> {
        if self.images(domain).is_empty() {
            let dir = match domain {
                Domain::Source => "source_dir",
                Domain::Target => "target_dir",
            };
            return Err(Error::Dataset(format!("{why} needs images in {dir}")));
        }
        Ok(())
    }

    /// Uniform image choice among those large enough, then a uniform
    /// top-left corner.
    pub fn sample_patch(&self, domain: Domain, h: usize, w: usize, seed: u64) -> Result<Patch> {
        let images = self.images(domain);
        let eligible: Vec<usize> =
            (0..images.len()).filter(|&i| images[i].1.height() >= h && images[i].1.width() >= w).collect();
        if h == 0 || w == 0 || eligible.is_empty() {
            return Err(Error::Dataset(format!(
                "no {} image can hold a {h}x{w} crop",
                if domain == Domain::Source { "source" } else { "target" }
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source_index = eligible[rng.random_range(0..eligible.len())];
        let img = &images[source_index].1;
        let y = rng.random_range(0..=img.height() - h);
        let x = rng.random_range(0..=img.width() - w);
        Ok(Patch { image: img.crop(y, x, h, w)?, source_index, y, x })
    }

    pub fn sample_lr_patch(&self, size: usize, seed: u64) -> Result<Patch> {
        self.sample_patch(Domain::Source, size, size, seed)
    }

    pub fn sample_reference_patch(&self, h: usize, w: usize, seed: u64) -> Result<Patch> {
        self.sample_patch(Domain::Target, h, w, seed)
    }
}
