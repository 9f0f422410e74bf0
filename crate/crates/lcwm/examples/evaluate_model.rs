//! Runs the forward-backward evaluation protocols against a trained run
//! directory (as produced by the `lcwm` CLI or the `simple_recall` example):
//! teacher-forced next-frame prediction and autoregressive imagination,
//! scored on the mirrored second half of each context.
//!
//!     cargo run --release --example evaluate_model -- <run_dir> <dataset_dir> [context]

use lcwm::evalkit::{eval_imagination, eval_next_frame};
use lcwm::gridworld::read_dataset;
use lcwm::trainer::load_world_model;
use lcwm::world::ModelKind;

fn main() -> lcwm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (run, data) = match (args.get(1), args.get(2)) {
        (Some(r), Some(d)) => (r.clone(), d.clone()),
        _ => {
            eprintln!("usage: evaluate_model <run_dir> <dataset_dir> [context]");
            std::process::exit(2);
        }
    };
    let context: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let episodes = read_dataset(std::path::Path::new(&data))?;
    println!("{} episodes, context {context}", episodes.len());

    for kind in [ModelKind::Full, ModelKind::AblateState, ModelKind::SsmOnly] {
        let model = match load_world_model(std::path::Path::new(&run), kind, None) {
            Ok(m) => m,
            Err(e) => {
                println!("{:>12}: skipped ({e})", kind.id());
                continue;
            }
        };
        let next = eval_next_frame(&model, &episodes, context, 0)?;
        println!(
            "{:>12}: next-frame avg {:.2} dB, final step {:.2} dB, ssim {:.3}",
            kind.id(),
            next.avg_psnr,
            next.fin_psnr,
            next.ssim
        );
        if kind == ModelKind::Full {
            let imag = eval_imagination(&model, &episodes, context, 0)?;
            println!(
                "{:>12}: imagination avg {:.2} dB, final step {:.2} dB",
                "", imag.avg_psnr, imag.fin_psnr
            );
        }
    }
    Ok(())
}
