//! Joint blind denoising and unsupervised super-resolution.
//!
//! A conditional VAE denoiser estimates the noise of a low-resolution image
//! given a latent code that describes a clean reference domain. A residual
//! super-resolution network is trained on top of it with a cycle loss, a
//! feature loss and an adversarial loss, without paired data.

pub mod degradation;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod training;

pub use error::{Error, Result};
