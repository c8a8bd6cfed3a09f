use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the encoder's convolutional stack is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Randomly initialized and trained with the rest of the denoiser.
    SmallConv,
    /// Imported from an external weight container and kept frozen; only the
    /// two latent heads are trained.
    FrozenPretrained,
}

/// Geometry of the decoder's transposed convolutions. Only the single
/// supported value (two layers, kernel 6, stride 4, padding 1) validates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvGeometry {
    pub layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl DeconvGeometry {
    pub const FIXED: Self = Self { layers: 2, kernel: 6, stride: 4, padding: 1 };
}

impl Default for DeconvGeometry {
    fn default() -> Self {
        Self::FIXED
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_len: usize,
    pub srsn_blocks: usize,
    pub srsn_channels: usize,
    /// Super-resolution factor.
    pub alpha: usize,
    pub decoder_deconv: DeconvGeometry,
    pub decoder_resblocks: usize,
    pub decoder_channels: usize,
    pub encoder_kind: EncoderKind,
    pub encoder_channels: [usize; 4],
    pub disc_channels: [usize; 5],
    pub feature_channels: [usize; 4],
}

/// Total stride of the encoder, the decoder embedding and the feature extractor.
pub const STRIDE: usize = 16;

/// Smallest patch accepted by the discriminator.
pub const DISC_MIN_SIZE: usize = 32;

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            latent_len: 512,
            srsn_blocks: 4,
            srsn_channels: 64,
            alpha: 4,
            decoder_deconv: DeconvGeometry::FIXED,
            decoder_resblocks: 3,
            decoder_channels: 64,
            encoder_kind: EncoderKind::SmallConv,
            encoder_channels: [32, 64, 128, 128],
            disc_channels: [32, 64, 128, 256, 512],
            feature_channels: [64, 128, 256, 512],
        }
    }

    pub fn desk() -> Self {
        Self {
            latent_len: 64,
            srsn_blocks: 2,
            srsn_channels: 16,
            alpha: 4,
            decoder_deconv: DeconvGeometry::FIXED,
            decoder_resblocks: 3,
            decoder_channels: 32,
            encoder_kind: EncoderKind::SmallConv,
            encoder_channels: [32, 64, 128, 128],
            disc_channels: [16, 32, 64, 128, 256],
            feature_channels: [16, 32, 32, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_len", self.latent_len),
            ("srsn_channels", self.srsn_channels),
            ("alpha", self.alpha),
            ("decoder_channels", self.decoder_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        let lists: [(&str, &[usize]); 3] = [
            ("encoder_channels", &self.encoder_channels),
            ("disc_channels", &self.disc_channels),
            ("feature_channels", &self.feature_channels),
        ];
        for (name, list) in lists {
            if list.contains(&0) {
                return Err(Error::Config(format!("model.{name} entries must be >= 1")));
            }
        }
        if self.decoder_deconv != DeconvGeometry::FIXED {
            return Err(Error::Config(format!(
                "model.decoder_deconv must be {:?}, got {:?}",
                DeconvGeometry::FIXED,
                self.decoder_deconv
            )));
        }
        Ok(())
    }
}
