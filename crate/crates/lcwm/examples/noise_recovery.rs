//! Corrupts the middle frames of each evaluation context with Gaussian noise
//! and measures how quickly prediction quality recovers once the inputs are
//! clean again. The recurrent state takes a few steps to wash the noise out.
//!
//!     cargo run --release --example noise_recovery -- <run_dir> <dataset_dir> [context]

use lcwm::evalkit::{noise_robustness, NoiseConfig};
use lcwm::gridworld::read_dataset;
use lcwm::trainer::load_world_model;
use lcwm::world::ModelKind;

fn main() -> lcwm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (run, data) = match (args.get(1), args.get(2)) {
        (Some(r), Some(d)) => (r.clone(), d.clone()),
        _ => {
            eprintln!("usage: noise_recovery <run_dir> <dataset_dir> [context]");
            std::process::exit(2);
        }
    };
    let context: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let model = load_world_model(std::path::Path::new(&run), ModelKind::Full, None)?;
    let episodes = read_dataset(std::path::Path::new(&data))?;

    let cfg = NoiseConfig::default(); // std 2.5/255, 11 middle frames
    let report = noise_robustness(&model, &episodes, context, &cfg, 0)?;
    println!("per-step PSNR with noise on the middle {} context frames:", cfg.window);
    for (i, v) in report.report.per_step_psnr.iter().enumerate() {
        let tag = if report.noisy_steps.contains(&(i + 1)) {
            "noisy target"
        } else if i + 1 == report.recovery_step {
            "<- recovery checkpoint"
        } else {
            ""
        };
        println!("{:>4}  {v:>7.2} dB  {tag}", i + 1);
    }
    println!(
        "mean PSNR during the noisy window: {:.2} dB; 4 steps after it: {:.2} dB",
        report.mean_noisy_psnr(),
        report.recovery_psnr()
    );
    Ok(())
}
