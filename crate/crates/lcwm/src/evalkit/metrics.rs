use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR cap used for identical images, keeping means finite.
pub const PSNR_CAP: f64 = 100.0;

/// Peak Signal-to-Noise Ratio in dB between two [0,1] images (any layout,
/// compared element-wise). Identical images score the 100 dB cap.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("psnr: {} vs {} values", a.len(), b.len())));
    }
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).clamp(0.0, PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Rec. 601 luma weights used to collapse RGB to grayscale.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as i64;
    let mut k = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for r in -half..=half {
        for c in -half..=half {
            k.push((-((r * r + c * c) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn to_luma(rgb: &[f32], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for px in rgb.chunks_exact(3) {
        out.push(px.iter().zip(LUMA).map(|(&v, lw)| v as f64 * lw).sum());
    }
    out
}

/// Mean local SSIM between two interleaved-RGB [0,1] images: grayscale by
/// fixed luma weights, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1.0. Windows are taken fully inside the image.
pub fn ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w * 3 || b.len() != h * w * 3 {
        return Err(Error::Shape(format!(
            "ssim: expected {} values, got {} and {}",
            h * w * 3,
            a.len(),
            b.len()
        )));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim: image {h}x{w} smaller than window")));
    }
    let (xa, xb) = (to_luma(a, h, w), to_luma(b, h, w));
    let kernel = gaussian_kernel();
    let half = SSIM_WINDOW / 2;
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for cr in half..h - half {
        for cc in half..w - half {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let mut ki = 0;
            for r in cr - half..=cr + half {
                for c in cc - half..=cc + half {
                    let (va, vb) = (xa[r * w + c], xb[r * w + c]);
                    let kw = kernel[ki];
                    ki += 1;
                    mx += kw * va;
                    my += kw * vb;
                    mxx += kw * va * va;
                    myy += kw * vb * vb;
                    mxy += kw * va * vb;
                }
            }
            let (vx, vy, vxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
            let s = ((2.0 * mx * my + c1) * (2.0 * vxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Aggregate metrics of one evaluation run over the mirrored second half.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_psnr: f64,
    pub fin_psnr: f64,
    pub ssim: f64,
    /// PSNR per prediction step, averaged over episodes; length = L/2.
    pub per_step_psnr: Vec<f64>,
    pub context_len: usize,
    pub mode: String,
    pub model_id: String,
    pub seed: u64,
}

impl MetricsReport {
    /// Aggregates a per-episode, per-step PSNR/SSIM table. `psnr_table[e][s]`
    /// is episode `e`, prediction step `s`.
    pub fn from_tables(
        psnr_table: &[Vec<f64>],
        ssim_table: &[Vec<f64>],
        context_len: usize,
        mode: &str,
        model_id: &str,
        seed: u64,
    ) -> MetricsReport {
        let episodes = psnr_table.len() as f64;
        let steps = psnr_table.first().map_or(0, |r| r.len());
        let mut per_step = vec![0.0; steps];
        let mut all = 0.0;
        let mut fin = 0.0;
        for row in psnr_table {
            for (s, &v) in row.iter().enumerate() {
                per_step[s] += v / episodes;
                all += v;
            }
            fin += row.last().copied().unwrap_or(0.0);
        }
        let ssim_mean = ssim_table.iter().flatten().sum::<f64>()
            / ssim_table.iter().map(|r| r.len()).sum::<usize>().max(1) as f64;
        MetricsReport {
            avg_psnr: all / (episodes * steps as f64).max(1.0),
            fin_psnr: fin / episodes.max(1.0),
            ssim: ssim_mean,
            per_step_psnr: per_step,
            context_len,
            mode: mode.to_string(),
            model_id: model_id.to_string(),
            seed,
        }
    }
}
