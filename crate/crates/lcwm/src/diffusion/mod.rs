//! Generative branch: EDM preconditioning, the conditioning fusion module,
//! the UNet denoiser and the Heun sampler.

mod denoiser;
mod edm;
mod fusion;
mod unet;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use edm::{loss_weight, precondition, EdmSchedule, Precond, SIGMA_DATA};
pub use fusion::{Fusion, FusionConfig, FUSION_WINDOW};
pub use unet::{Unet, UnetConfig};

use candle_core::{Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Standard-normal samples from the crate's seeded RNG (Box-Muller), so all
/// stochastic tensors are reproducible independently of the backend RNG.
pub(crate) fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        out.push((r * th.cos()) as f32);
        out.push((r * th.sin()) as f32);
    }
    out.truncate(n);
    out
}

pub(crate) fn randn_tensor(
    rng: &mut ChaCha8Rng,
    dims: &[usize],
    device: &Device,
) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    Ok(Tensor::from_vec(randn_vec(rng, n), dims, device)?)
}
