//! Small tour of the evaluation toolkit without any trained model: PSNR and
//! SSIM on synthetic images, and the PNG line plotter.
//!
//!     cargo run --release --example metrics_and_plots -- [out_dir]

use lcwm::evalkit::{line_plot, psnr, ssim, Series, PSNR_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lcwm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/metrics".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out)?;

    let (h, w) = (32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clean: Vec<f32> = (0..h * w * 3).map(|i| ((i / 3 % 7) as f32) / 6.0).collect();

    println!("identical images: psnr = {} dB (capped), ssim = {:.4}", PSNR_CAP, ssim(&clean, &clean, h, w)?);

    // Quality degrades smoothly with additive noise.
    let mut psnr_curve = Vec::new();
    let mut ssim_curve = Vec::new();
    for level in 1..=10 {
        let std = level as f32 * 0.02;
        let noisy: Vec<f32> = clean
            .iter()
            .map(|&v| (v + std * rng.gen_range(-1.0f32..1.0)).clamp(0.0, 1.0))
            .collect();
        let p = psnr(&noisy, &clean)?;
        let s = ssim(&noisy, &clean, h, w)?;
        println!("noise std {std:.2}: psnr {p:6.2} dB, ssim {s:.4}");
        psnr_curve.push(p);
        ssim_curve.push(s * 40.0); // scaled onto the same axis for the plot
    }

    line_plot(
        &out.join("degradation.png"),
        &[
            Series { label: "psnr (dB)", values: &psnr_curve },
            Series { label: "ssim x40", values: &ssim_curve },
        ],
    )?;
    println!("plot written to {}", out.join("degradation.png").display());
    Ok(())
}
