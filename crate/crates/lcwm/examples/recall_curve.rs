//! Per-step recall comparison: how prediction quality decays with distance
//! into the mirrored second half, for the memory-conditioned model versus the
//! zeroed-memory baseline. Writes a CSV and a PNG plot.
//!
//!     cargo run --release --example recall_curve -- <run_dir> <dataset_dir> [context] [out_dir]

use lcwm::evalkit::{line_plot, recall_curve, Series};
use lcwm::gridworld::read_dataset;
use lcwm::trainer::load_world_model;
use lcwm::world::ModelKind;

fn main() -> lcwm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (run, data) = match (args.get(1), args.get(2)) {
        (Some(r), Some(d)) => (r.clone(), d.clone()),
        _ => {
            eprintln!("usage: recall_curve <run_dir> <dataset_dir> [context] [out_dir]");
            std::process::exit(2);
        }
    };
    let context: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let out = args.get(4).cloned().unwrap_or_else(|| "out/recall".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out)?;

    let run = std::path::Path::new(&run);
    let full = load_world_model(run, ModelKind::Full, None)?;
    let ablate = load_world_model(run, ModelKind::AblateState, None)?;
    let episodes = read_dataset(std::path::Path::new(&data))?;

    let curve = recall_curve(&full, &ablate, &episodes, context, 0)?;
    println!("step  with-memory  zeroed-memory  (PSNR, dB)");
    for (i, (f, a)) in
        curve.full.per_step_psnr.iter().zip(&curve.ablate.per_step_psnr).enumerate()
    {
        println!("{:>4}  {f:>11.2}  {a:>13.2}", i + 1);
    }

    std::fs::write(out.join("recall.csv"), curve.to_csv())?;
    line_plot(
        &out.join("recall.png"),
        &[
            Series { label: "with memory", values: &curve.full.per_step_psnr },
            Series { label: "memory zeroed", values: &curve.ablate.per_step_psnr },
        ],
    )?;
    println!("wrote {} and recall.png", out.join("recall.csv").display());
    Ok(())
}
