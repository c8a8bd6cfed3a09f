//! The conditional VAE denoiser (encoder and noise-estimating decoder), the
//! super-resolution subnetwork, the discriminator and the frozen feature
//! extractor.
//!
//! The functions in this module work on single [`Image`]s and never record
//! gradients. Training code uses the batched graph builders in
//! [`networks`] directly.

mod config;
pub mod networks;
mod params;

pub use config::{DeconvGeometry, EncoderKind, ModelConfig, DISC_MIN_SIZE, STRIDE};
pub use params::{
    is_trainable_under, manifest, ArraySpec, Bound, InitOptions, Network, ParamEntry, ParameterSet, FEATURE_SEED,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use vaesr_autograd::{Float, Tensor, Var};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Approximate posterior `N(mean, exp(log_variance))` over the latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentDistribution {
    pub fn standard(len: usize) -> Self {
        Self { mean: vec![0.0; len], log_variance: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Latent code used when only the decoder is run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMode {
    /// `z = 0`.
    #[default]
    PriorMean,
    /// `z ~ N(0, I)` drawn from the given seed.
    PriorSample(u64),
}

/// `n` standard-normal draws from a ChaCha8 stream.
pub fn standard_normal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `mean + eps * exp(0.5 * log_variance)` in the graph; `eps` is a constant.
pub fn reparameterize<T: Float>(mean: &Var<T>, log_variance: &Var<T>, eps: Tensor<T>) -> Var<T> {
    log_variance.scale(0.5).exp().mul(&Var::constant(eps)).add(mean)
}

fn single<T: Float>(img: &Image) -> Var<T> {
    Var::constant(img.to_tensor())
}

fn latent_var<T: Float>(z: &[f64]) -> Var<T> {
    Var::constant(Tensor::new([1, z.len()], z.iter().map(|&v| T::from_f64(v)).collect()))
}

pub fn encode<T: Float>(reference: &Image, params: &ParameterSet<T>) -> Result<LatentDistribution> {
    let (m, lv) = networks::encoder(&params.bind_frozen(), &single(reference))?;
    let to_vec = |v: &Var<T>| v.value().data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    Ok(LatentDistribution { mean: to_vec(&m), log_variance: to_vec(&lv) })
}

/// `z = mean + eps * exp(0.5 * log_variance)`, with `eps` drawn from `seed`
/// when not supplied.
pub fn sample_latent(dist: &LatentDistribution, epsilon: Option<&[f64]>, seed: u64) -> Result<Vec<f64>> {
    let n = dist.len();
    if dist.log_variance.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "mean has {n} entries, log_variance {}",
            dist.log_variance.len()
        )));
    }
    let drawn;
    let eps = match epsilon {
        Some(e) if e.len() != n => {
            return Err(Error::DimensionMismatch(format!("epsilon has {} entries, expected {n}", e.len())))
        }
        Some(e) => e,
        None => {
            drawn = standard_normal(n, seed);
            &drawn
        }
    };
    Ok((0..n).map(|j| dist.mean[j] + eps[j] * (0.5 * dist.log_variance[j]).exp()).collect())
}

fn check_latent(z: &[f64], cfg: &ModelConfig) -> Result<()> {
    if z.len() != cfg.latent_len {
        return Err(Error::DimensionMismatch(format!("latent has {} entries, expected {}", z.len(), cfg.latent_len)));
    }
    Ok(())
}

pub fn decode_noise<T: Float>(noisy: &Image, z: &[f64], params: &ParameterSet<T>) -> Result<Image> {
    check_latent(z, params.config())?;
    let out = networks::decoder(params.config(), &params.bind_frozen(), &single(noisy), &latent_var(z))?;
    Image::from_tensor(out.value(), 0)
}

/// `noisy - decode_noise(noisy, z)`.
pub fn denoise<T: Float>(noisy: &Image, z: &[f64], params: &ParameterSet<T>) -> Result<Image> {
    noisy.sub(&decode_noise(noisy, z, params)?)
}

pub fn denoise_inference<T: Float>(noisy: &Image, params: &ParameterSet<T>, mode: LatentMode) -> Result<Image> {
    let len = params.config().latent_len;
    let z = match mode {
        LatentMode::PriorMean => vec![0.0; len],
        LatentMode::PriorSample(seed) => standard_normal(len, seed),
    };
    denoise(noisy, &z, params)
}

pub fn super_resolve<T: Float>(clean_lr: &Image, params: &ParameterSet<T>, alpha: usize) -> Result<Image> {
    if alpha != params.config().alpha {
        return Err(Error::InvalidArgument(format!(
            "scale {alpha} does not match the model's {}",
            params.config().alpha
        )));
    }
    let out = networks::srsn(params.config(), &params.bind_frozen(), &single(clean_lr))?;
    Image::from_tensor(out.value(), 0)
}

pub fn discriminate<T: Float>(patch: &Image, params: &ParameterSet<T>) -> Result<f64> {
    Ok(networks::discriminator(&params.bind_frozen(), &single(patch))?.value().item().as_f64())
}

/// Stage-4 feature map `(1, C, H/16, W/16)`.
pub fn extract_features<T: Float>(img: &Image, params: &ParameterSet<T>) -> Result<Tensor<T>> {
    Ok(networks::features(&params.bind_frozen(), &single(img))?.value().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::bicubic_resize;

    fn small_config() -> ModelConfig {
        ModelConfig {
            latent_len: 8,
            srsn_blocks: 1,
            srsn_channels: 4,
            decoder_resblocks: 1,
            decoder_channels: 4,
            encoder_channels: [4, 4, 4, 4],
            disc_channels: [4, 4, 4, 4, 4],
            feature_channels: [4, 4, 4, 4],
            ..ModelConfig::desk()
        }
    }

    fn textured(h: usize, w: usize, seed: u64) -> Image {
        let noise = standard_normal(h * w * 3, seed);
        Image::new(h, w, noise.iter().map(|v| 0.5 + 0.2 * v).collect()).unwrap()
    }

    #[test]
    fn reparameterization_examples() {
        let d = LatentDistribution { mean: vec![1.0; 3], log_variance: vec![4f64.ln(); 3] };
        let z = sample_latent(&d, Some(&[1.0; 3]), 0).unwrap();
        assert!(z.iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert_eq!(sample_latent(&d, Some(&[0.0; 3]), 0).unwrap(), d.mean);
        let e = [0.3, -1.2, 2.0];
        assert_eq!(sample_latent(&LatentDistribution::standard(3), Some(&e), 0).unwrap(), e);
        assert!(sample_latent(&d, Some(&[0.0; 2]), 0).is_err());
    }

    #[test]
    fn encoder_shapes_and_zero_heads() {
        let cfg = small_config();
        let mut p = ParameterSet::<f64>::init(&cfg, 3).unwrap();
        let a = encode(&textured(16, 32, 1), &p).unwrap();
        let b = encode(&textured(16, 32, 2), &p).unwrap();
        assert_eq!((a.mean.len(), a.log_variance.len()), (8, 8));
        assert_ne!(a.mean, b.mean);
        p.zero_prefix("encoder.mean");
        p.zero_prefix("encoder.log_variance");
        assert_eq!(encode(&textured(16, 16, 1), &p).unwrap(), LatentDistribution::standard(8));
        assert!(encode(&textured(8, 16, 1), &p).is_err());
    }

    #[test]
    fn zero_decoder_is_identity() {
        let cfg = small_config();
        let p = ParameterSet::<f64>::init(&cfg, 3).unwrap();
        let noisy = textured(32, 16, 5);
        let z = standard_normal(8, 1);
        assert_eq!(decode_noise(&noisy, &z, &p).unwrap(), Image::filled(32, 16, [0.0; 3]));
        assert_eq!(denoise(&noisy, &z, &p).unwrap(), noisy);
        assert!(decode_noise(&textured(24, 16, 5), &z, &p).is_err());
        assert!(decode_noise(&noisy, &z[..4], &p).is_err());
    }

    #[test]
    fn denoise_plus_noise_reconstructs_input() {
        let cfg = small_config();
        let p = ParameterSet::<f64>::init_with(&cfg, 3, InitOptions { zero_final: false }).unwrap();
        let noisy = textured(16, 16, 5);
        let z = standard_normal(8, 1);
        let noise = decode_noise(&noisy, &z, &p).unwrap();
        let clean = denoise(&noisy, &z, &p).unwrap();
        assert!(noise.data().iter().any(|&v| v != 0.0));
        for ((c, n), x) in clean.data().iter().zip(noise.data()).zip(noisy.data()) {
            assert!((c + n - x).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_modes() {
        let cfg = small_config();
        let mut p = ParameterSet::<f64>::init_with(&cfg, 4, InitOptions { zero_final: false }).unwrap();
        let x = textured(16, 16, 2);
        let a = denoise_inference(&x, &p, LatentMode::PriorMean).unwrap();
        assert_eq!(a, denoise_inference(&x, &p, LatentMode::PriorMean).unwrap());
        assert_eq!(
            denoise_inference(&x, &p, LatentMode::PriorSample(7)).unwrap(),
            denoise_inference(&x, &p, LatentMode::PriorSample(7)).unwrap()
        );
        p.zero_prefix("encoder.mean");
        p.zero_prefix("encoder.log_variance");
        let dist = encode(&x, &p).unwrap();
        let z = sample_latent(&dist, Some(&[0.0; 8]), 0).unwrap();
        assert_eq!(denoise(&x, &z, &p).unwrap(), a);
    }

    #[test]
    fn zero_srsn_is_bicubic() {
        let cfg = small_config();
        let p = ParameterSet::<f64>::init(&cfg, 1).unwrap();
        let x = textured(5, 7, 3);
        let y = super_resolve(&x, &p, 4).unwrap();
        assert_eq!(y.dims(), (20, 28));
        assert_eq!(y, bicubic_resize(&x, 4.0, false).unwrap());
        assert!(super_resolve(&x, &p, 2).is_err());

        let p1 = ParameterSet::<f64>::init(&ModelConfig { alpha: 1, ..cfg }, 1).unwrap();
        assert_eq!(super_resolve(&x, &p1, 1).unwrap(), x);
    }

    #[test]
    fn discriminator_range_and_zero_head() {
        let cfg = small_config();
        let mut p = ParameterSet::<f64>::init(&cfg, 1).unwrap();
        let d = discriminate(&textured(32, 32, 1), &p).unwrap();
        assert!(d > 0.0 && d < 1.0);
        assert!(discriminate(&textured(16, 32, 1), &p).is_err());
        p.zero_prefix("discriminator.fc");
        assert_eq!(discriminate(&textured(32, 48, 1), &p).unwrap(), 0.5);
    }

    #[test]
    fn feature_shapes() {
        let p = ParameterSet::<f64>::init(&small_config(), 1).unwrap();
        let a = extract_features(&textured(32, 48, 1), &p).unwrap();
        assert_eq!(a.shape(), &[1, 4, 2, 3]);
        assert_eq!(a, extract_features(&textured(32, 48, 1), &p).unwrap());
        assert_ne!(a, extract_features(&textured(32, 48, 2), &p).unwrap());
    }
}
