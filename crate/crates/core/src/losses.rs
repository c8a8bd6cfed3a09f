//! Training objectives as differentiable scalars, plus plain-number
//! versions of the closed forms used by tests and reports.

use serde::{Deserialize, Serialize};
use vaesr_autograd::{Float, Var};

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize_var, Image};
use crate::models::LatentDistribution;

/// Floor applied to the argument of every logarithm in the adversarial terms.
pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the feature term.
    pub lambda_feat: f64,
    /// Weight of the adversarial term.
    pub eta_adv: f64,
    /// Weight of the KL term in the denoiser objective.
    pub kl_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_feat: 1.0, eta_adv: 5e-3, kl_weight: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_feat", self.lambda_feat), ("eta_adv", self.eta_adv), ("kl_weight", self.kl_weight)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("weights.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms and their weighted total.
///
/// `total = reconstruction + kl_weight * kl + cycle_lowfreq + cycle_backproj
/// + lambda_feat * feature + eta_adv * adversarial`. Terms that a phase does
/// not use are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub reconstruction: f64,
    pub cycle_lowfreq: f64,
    pub cycle_backproj: f64,
    pub feature: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// The weighted sum of the parts, ignoring the stored `total`.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.reconstruction
            + w.kl_weight * self.kl
            + self.cycle_lowfreq
            + self.cycle_backproj
            + w.lambda_feat * self.feature
            + w.eta_adv * self.adversarial
    }

    /// Fill in `total` from the parts.
    pub fn with_total(mut self, w: &LossWeights) -> Self {
        self.total = self.weighted_total(w);
        self
    }

    pub fn parts(&self) -> [(&'static str, f64); 6] {
        [
            ("kl", self.kl),
            ("reconstruction", self.reconstruction),
            ("cycle_lowfreq", self.cycle_lowfreq),
            ("cycle_backproj", self.cycle_backproj),
            ("feature", self.feature),
            ("adversarial", self.adversarial),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.total.is_finite() && self.parts().iter().all(|(_, v)| v.is_finite())
    }
}

/// `KL(N(m, exp(lv)) || N(0, I))` for one distribution.
pub fn kl_divergence(dist: &LatentDistribution) -> Result<f64> {
    if dist.mean.len() != dist.log_variance.len() {
        return Err(Error::DimensionMismatch("mean and log_variance lengths differ".into()));
    }
    let mut total = 0.0;
    for (&m, &lv) in dist.mean.iter().zip(&dist.log_variance) {
        if !(m.is_finite() && lv.is_finite()) {
            return Err(Error::NonFinite("latent distribution".into()));
        }
        total += lv.exp() + m * m - 1.0 - lv;
    }
    Ok(0.5 * total)
}

/// Batched KL of `(N, L)` mean and log-variance, averaged over `N`.
pub fn kl_var<T: Float>(mean: &Var<T>, log_variance: &Var<T>) -> Var<T> {
    let n = mean.shape()[0] as f64;
    log_variance.exp().add(&mean.mul(mean)).sub(log_variance).affine(1.0, -1.0).sum().scale(0.5 / n)
}

/// Mean absolute difference.
pub fn mae_var<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    a.sub(b).abs().mean()
}

pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64)
}

/// Reconstruction MAE plus the KL term.
pub fn dae_loss(
    denoised: &Image,
    clean_target: &Image,
    dist: &LatentDistribution,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let reconstruction = mae(denoised, clean_target)?;
    let kl = kl_divergence(dist)?;
    Ok(LossBreakdown { kl, reconstruction, ..Default::default() }.with_total(weights))
}

/// Graph nodes produced by [`cycle_loss`].
pub struct CycleTerms<T: Float> {
    /// `g(X)`.
    pub denoised: Var<T>,
    /// `Y = f(g(X))`.
    pub sr: Var<T>,
    /// `mean |s(Y) - g(X)|`.
    pub lowfreq: Var<T>,
    /// `mean |Y - f(s(Y))|`.
    pub backproj: Var<T>,
}

/// Cycle terms for an LR batch `x` with denoiser `g`, super-resolver `f` and
/// bicubic down-sampling `s` by `1 / alpha`.
pub fn cycle_loss<T: Float>(
    x: &Var<T>,
    f: impl Fn(&Var<T>) -> Result<Var<T>>,
    g: impl Fn(&Var<T>) -> Result<Var<T>>,
    alpha: usize,
) -> Result<CycleTerms<T>> {
    if alpha == 0 {
        return Err(Error::InvalidArgument("alpha must be >= 1".into()));
    }
    let denoised = g(x)?;
    let sr = f(&denoised)?;
    let down = downsample(&sr, alpha)?;
    let lowfreq = mae_var(&down, &denoised);
    let back = f(&down)?;
    let backproj = mae_var(&sr, &back);
    Ok(CycleTerms { denoised, sr, lowfreq, backproj })
}

/// Antialiased bicubic down-sampling by an integer factor.
pub fn downsample<T: Float>(x: &Var<T>, alpha: usize) -> Result<Var<T>> {
    if alpha == 1 {
        return Ok(x.clone());
    }
    bicubic_resize_var(x, 1.0 / alpha as f64, true)
}

/// `mean |s(phi(sr)) - phi(denoised_lr)|`: the SR-side feature map is
/// down-sampled to the LR-side resolution.
pub fn feature_loss<T: Float>(
    sr: &Var<T>,
    denoised_lr: &Var<T>,
    extractor: impl Fn(&Var<T>) -> Result<Var<T>>,
    alpha: usize,
) -> Result<Var<T>> {
    let hi = downsample(&extractor(sr)?, alpha)?;
    let lo = extractor(denoised_lr)?;
    if hi.shape() != lo.shape() {
        return Err(Error::DimensionMismatch(format!(
            "feature maps {:?} (SR, reduced) vs {:?} (LR)",
            hi.shape(),
            lo.shape()
        )));
    }
    Ok(mae_var(&hi, &lo))
}

/// `mean log(1 - D(fake))`, minimized by the generator.
pub fn adversarial_loss_generator<T: Float>(d_fake: &Var<T>) -> Var<T> {
    d_fake.affine(-1.0, 1.0).guarded_ln(LOG_FLOOR).mean()
}

/// `-mean log D(fake)`, the non-saturating substitute.
pub fn adversarial_loss_generator_non_saturating<T: Float>(d_fake: &Var<T>) -> Var<T> {
    d_fake.guarded_ln(LOG_FLOOR).mean().scale(-1.0)
}

/// `-mean [log D(real) + log(1 - D(fake))]`.
pub fn discriminator_loss<T: Float>(d_real: &Var<T>, d_fake: &Var<T>) -> Var<T> {
    let real = d_real.guarded_ln(LOG_FLOOR).mean();
    let fake = d_fake.affine(-1.0, 1.0).guarded_ln(LOG_FLOOR).mean();
    real.add(&fake).scale(-1.0)
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("no probabilities".into()));
    }
    if let Some(v) = p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::InvalidArgument(format!("probability {v} outside (0, 1)")));
    }
    Ok(())
}

/// Plain-number form of [`adversarial_loss_generator`].
pub fn generator_adversarial_value(d_fake: &[f64]) -> Result<f64> {
    check_probabilities(d_fake)?;
    Ok(d_fake.iter().map(|d| (1.0 - d).max(LOG_FLOOR).ln()).sum::<f64>() / d_fake.len() as f64)
}

/// Plain-number form of [`discriminator_loss`].
pub fn discriminator_loss_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_probabilities(d_real)?;
    check_probabilities(d_fake)?;
    let real = d_real.iter().map(|d| d.max(LOG_FLOOR).ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake.iter().map(|d| (1.0 - d).max(LOG_FLOOR).ln()).sum::<f64>() / d_fake.len() as f64;
    Ok(-(real + fake))
}

/// Unweighted generator-side terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorTerms {
    pub feature: f64,
    pub adversarial: f64,
    pub cycle_lowfreq: f64,
    pub cycle_backproj: f64,
}

/// `lambda_feat * feature + eta_adv * adversarial + cycle_lowfreq + cycle_backproj`.
pub fn total_generator_loss(c: GeneratorTerms, weights: &LossWeights) -> Result<LossBreakdown> {
    let parts = [c.feature, c.adversarial, c.cycle_lowfreq, c.cycle_backproj];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("generator terms {c:?}")));
    }
    Ok(LossBreakdown {
        feature: c.feature,
        adversarial: c.adversarial,
        cycle_lowfreq: c.cycle_lowfreq,
        cycle_backproj: c.cycle_backproj,
        ..Default::default()
    }
    .with_total(weights))
}
