//! Batched forward passes. Inputs are `(N, 3, H, W)` graph nodes and the
//! parameters come from a [`Bound`] set.

use vaesr_autograd::{Float, Var};

use super::config::{ModelConfig, DISC_MIN_SIZE, STRIDE};
use super::params::Bound;
use crate::error::{Error, Result};
use crate::imaging::bicubic_resize_var;

const LEAKY_SLOPE: f64 = 0.2;

fn spatial<T: Float>(x: &Var<T>) -> (usize, usize) {
    let (_, _, h, w) = x.value().dims4();
    (h, w)
}

fn require_min<T: Float>(x: &Var<T>, min: usize, what: &str) -> Result<()> {
    let (h, w) = spatial(x);
    if h < min || w < min {
        return Err(Error::InvalidArgument(format!("{what} needs inputs of at least {min}x{min}, got {h}x{w}")));
    }
    Ok(())
}

fn resblock<T: Float>(p: &Bound<T>, x: &Var<T>, prefix: &str) -> Var<T> {
    let h = p.conv(x, &format!("{prefix}.conv1"), 3, 1, 1).relu();
    p.conv(&h, &format!("{prefix}.conv2"), 3, 1, 1).add(x)
}

/// Mean and log-variance heads, each `(N, latent_len)`.
pub fn encoder<T: Float>(p: &Bound<T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    require_min(x, STRIDE, "encoder")?;
    let mut h = x.clone();
    for i in 1..=4 {
        h = p.conv(&h, &format!("encoder.conv{i}"), 4, 2, 1).relu();
    }
    let pooled = h.global_avg_pool();
    Ok((p.linear(&pooled, "encoder.mean"), p.linear(&pooled, "encoder.log_variance")))
}

/// Noise estimate with the shape of `noisy`, conditioned on `z: (N, L)`.
///
/// The noisy input is embedded to 1/16 resolution, concatenated with the
/// spatially broadcast latent code and brought back to full resolution by
/// two stride-4 transposed convolutions. A full-resolution copy of the input
/// is concatenated again before the residual refinement stage.
pub fn decoder<T: Float>(cfg: &ModelConfig, p: &Bound<T>, noisy: &Var<T>, z: &Var<T>) -> Result<Var<T>> {
    let (n, _, h, w) = noisy.value().dims4();
    if h == 0 || w == 0 || h % STRIDE != 0 || w % STRIDE != 0 {
        return Err(Error::InvalidArgument(format!(
            "decoder input {h}x{w} is not a positive multiple of {STRIDE}"
        )));
    }
    if z.shape() != [n, cfg.latent_len] {
        return Err(Error::DimensionMismatch(format!(
            "latent batch {:?}, expected [{n}, {}]",
            z.shape(),
            cfg.latent_len
        )));
    }
    let g = cfg.decoder_deconv;
    let e = p.conv(noisy, "decoder.embed1", 4, 4, 0).relu();
    let e = p.conv(&e, "decoder.embed2", 4, 4, 0).relu();
    let zmap = z.broadcast_spatial(h / STRIDE, w / STRIDE);
    let d = Var::concat_channels(&[&e, &zmap]);
    let d = p.deconv(&d, "decoder.deconv1", g.kernel, g.stride, g.padding).relu();
    let d = p.deconv(&d, "decoder.deconv2", g.kernel, g.stride, g.padding).relu();
    let mut r = p.conv(&Var::concat_channels(&[&d, noisy]), "decoder.fuse", 3, 1, 1).relu();
    for i in 0..cfg.decoder_resblocks {
        r = resblock(p, &r, &format!("decoder.res{i}"));
    }
    Ok(p.conv(&r, "decoder.out", 3, 1, 1))
}

/// `bicubic_up(x, alpha) + R(bicubic_up(x, alpha))`.
pub fn srsn<T: Float>(cfg: &ModelConfig, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
    let base = if cfg.alpha == 1 { x.clone() } else { bicubic_resize_var(x, cfg.alpha as f64, false)? };
    let mut h = p.conv(&base, "srsn.conv_in", 3, 1, 1);
    for i in 0..cfg.srsn_blocks {
        h = resblock(p, &h, &format!("srsn.res{i}"));
    }
    Ok(p.conv(&h, "srsn.conv_out", 3, 1, 1).add(&base))
}

/// Probability `(N, 1)` that each patch is a real reference crop.
pub fn discriminator<T: Float>(p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
    require_min(x, DISC_MIN_SIZE, "discriminator")?;
    let mut h = x.clone();
    for i in 1..=5 {
        h = p.conv(&h, &format!("discriminator.conv{i}"), 4, 2, 1).leaky_relu(LEAKY_SLOPE);
    }
    Ok(p.linear(&h.global_avg_pool(), "discriminator.fc").sigmoid())
}

/// Stage-4 activations of the frozen extractor, `(N, C, H/16, W/16)`.
pub fn features<T: Float>(p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
    require_min(x, STRIDE, "feature extractor")?;
    let mut h = x.clone();
    for i in 1..=4 {
        h = p.conv(&h, &format!("features.conv{i}"), 3, 1, 1).relu().avg_pool2();
    }
    Ok(h)
}
