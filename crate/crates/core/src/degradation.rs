//! Synthetic degradation `X = s(K * Y) + n`: Gaussian blur, antialiased
//! bicubic down-sampling and additive Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    /// Blur standard deviation in pixels; 0 disables blurring.
    pub blur_sigma: f64,
    /// Integer down-sampling factor; 1 keeps the resolution.
    pub scale: usize,
    /// Noise standard deviation on the `[0, 1]` scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self { blur_sigma: 0.0, scale: 1, noise_sigma: 25.0 / 255.0, seed: 0 }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.scale == 0 {
            return Err(Error::InvalidArgument("scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (h, w) = img.dims();
    let clamp = |v: i64, len: usize| v.clamp(0, len as i64 - 1) as usize;
    let horizontal = Image::from_fn(h, w, |y, x, c| {
        kernel.iter().enumerate().map(|(k, wt)| wt * img.get(y, clamp(x as i64 + k as i64 - r, w), c)).sum()
    });
    Ok(Image::from_fn(h, w, |y, x, c| {
        kernel.iter().enumerate().map(|(k, wt)| wt * horizontal.get(clamp(y as i64 + k as i64 - r, h), x, c)).sum()
    }))
}

/// Add i.i.d. `N(0, sigma^2)` noise drawn from a ChaCha8 stream seeded with
/// `seed`. The result is not clamped.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * n;
    }
    Ok(out)
}

/// Crop to a multiple of `spec.scale`, then blur, down-sample and add noise.
pub fn degrade(img: &Image, spec: &DegradationSpec) -> Result<Image> {
    spec.validate()?;
    let cropped = img.crop_to_multiple(spec.scale)?;
    let blurred = gaussian_blur(&cropped, spec.blur_sigma)?;
    let small = if spec.scale == 1 { blurred } else { bicubic_resize(&blurred, 1.0 / spec.scale as f64, true)? };
    add_gaussian_noise(&small, spec.noise_sigma, spec.seed)
}

/// Stable 64-bit seed derived from a base seed and a label such as a file name.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Stable 64-bit seed derived from a base seed and a sequence of integers.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x, c| (((y * 13 + x * 7 + c * 5) % 17) as f64) / 16.0)
    }

    #[test]
    fn identity_cases() {
        let img = textured(9, 12);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        assert_eq!(add_gaussian_noise(&img, 0.0, 3).unwrap(), img);
        let spec = DegradationSpec { blur_sigma: 0.0, scale: 1, noise_sigma: 0.0, seed: 9 };
        assert_eq!(degrade(&img, &spec).unwrap(), img);
    }

    #[test]
    fn rejects_negative_parameters() {
        let img = textured(4, 4);
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(add_gaussian_noise(&img, -0.1, 0).is_err());
        let spec = DegradationSpec { scale: 0, ..Default::default() };
        assert!(degrade(&img, &spec).is_err());
    }

    #[test]
    fn blur_of_impulse_matches_direct_sum() {
        let sigma = 1.0;
        let mut img = Image::filled(15, 15, [0.0; 3]);
        img.set(7, 7, 0, 1.0);
        let out = gaussian_blur(&img, sigma).unwrap();
        let g = |d: f64| (-d * d / 2.0).exp();
        let norm: f64 = (-3..=3).map(|d| g(d as f64)).sum();
        for (dy, dx) in [(0i64, 0i64), (1, 0), (2, -1), (3, 3)] {
            let expected = g(dy as f64) * g(dx as f64) / (norm * norm);
            let got = out.get((7 + dy) as usize, (7 + dx) as usize, 0);
            assert!((got - expected).abs() < 1e-9, "offset ({dy},{dx})");
        }
        assert_eq!(out.get(7, 11, 0), 0.0);
    }

    #[test]
    fn noise_statistics() {
        let sigma = 15.0 / 255.0;
        let out = add_gaussian_noise(&Image::filled(256, 256, [0.0; 3]), sigma, 42).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().sum::<f64>() / n;
        let sd = (out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((sd / sigma - 1.0).abs() < 0.05, "sd {sd}");
        assert_eq!(out, add_gaussian_noise(&Image::filled(256, 256, [0.0; 3]), sigma, 42).unwrap());
    }

    #[test]
    fn degrade_is_the_composition() {
        let img = textured(34, 41);
        let spec = DegradationSpec { blur_sigma: 1.2, scale: 4, noise_sigma: 10.0 / 255.0, seed: 77 };
        let out = degrade(&img, &spec).unwrap();
        assert_eq!(out.dims(), (8, 10));
        let manual = add_gaussian_noise(
            &bicubic_resize(&gaussian_blur(&img.crop_to_multiple(4).unwrap(), 1.2).unwrap(), 0.25, true).unwrap(),
            spec.noise_sigma,
            77,
        )
        .unwrap();
        assert_eq!(out, manual);
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(1, "a.png"), derive_seed(1, "a.png"));
        assert_ne!(derive_seed(1, "a.png"), derive_seed(2, "a.png"));
        assert_ne!(derive_seed(1, "a.png"), derive_seed(1, "b.png"));
        assert_ne!(mix_seed(5, &[1, 2]), mix_seed(5, &[2, 1]));
    }
}
