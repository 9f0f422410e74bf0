//! EDM preconditioning and noise schedule constants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assumed data standard deviation (images live in [-1, 1]).
pub const SIGMA_DATA: f64 = 0.5;

/// Sigma schedule and training-noise distribution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    /// Denoising steps used at sampling time.
    pub steps: usize,
    /// Log-normal training sigma distribution: ln(sigma) ~ N(p_mean, p_std).
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_data: f64,
}

impl Default for EdmSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            steps: 5,
            p_mean: -0.4,
            p_std: 1.2,
            sigma_data: SIGMA_DATA,
        }
    }
}

impl EdmSchedule {
    /// Decreasing sigma ladder for the sampler, with a trailing zero.
    pub fn sigma_ladder(&self) -> Vec<f64> {
        let n = self.steps.max(1);
        let inv_rho = 1.0 / self.rho;
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..n {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let s = self.sigma_max.powf(inv_rho)
                + t * (self.sigma_min.powf(inv_rho) - self.sigma_max.powf(inv_rho));
            out.push(s.powf(self.rho));
        }
        out.push(0.0);
        out
    }

    /// Draws a training sigma from the log-normal distribution.
    pub fn sample_sigma(&self, rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        (self.p_mean + self.p_std * z).exp()
    }
}

/// The four preconditioning coefficients for one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

/// c_skip = sd^2/(s^2+sd^2), c_out = s*sd/sqrt(s^2+sd^2),
/// c_in = 1/sqrt(s^2+sd^2), c_noise = ln(s)/4.
pub fn precondition(sigma: f64, sigma_data: f64) -> Result<Precond> {
    if sigma <= 0.0 {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let s2 = sigma * sigma + sigma_data * sigma_data;
    Ok(Precond {
        c_skip: sigma_data * sigma_data / s2,
        c_out: sigma * sigma_data / s2.sqrt(),
        c_in: 1.0 / s2.sqrt(),
        c_noise: sigma.ln() / 4.0,
    })
}

/// Training loss weight: (s^2 + sd^2) / (s * sd)^2; satisfies
/// weight(s) * c_out(s)^2 == 1 for every sigma.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}
