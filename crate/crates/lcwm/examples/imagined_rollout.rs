//! Autoregressive imagination with a trained model: condition on the first
//! half of an episode, then generate the entire mirrored second half frame by
//! frame, feeding each generated frame back in. Saves predicted frames next
//! to the ground truth for visual comparison.
//!
//!     cargo run --release --example imagined_rollout -- <run_dir> <dataset_dir> [context] [out_dir]

use lcwm::gridworld::{read_dataset, slice_context};
use lcwm::tokenizer::tensor_to_observations;
use lcwm::trainer::load_world_model;
use lcwm::world::{ContextBatch, ModelKind};

fn main() -> lcwm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (run, data) = match (args.get(1), args.get(2)) {
        (Some(r), Some(d)) => (r.clone(), d.clone()),
        _ => {
            eprintln!("usage: imagined_rollout <run_dir> <dataset_dir> [context] [out_dir]");
            std::process::exit(2);
        }
    };
    let context: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let out = args.get(4).cloned().unwrap_or_else(|| "out/rollout".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out)?;

    let model = load_world_model(std::path::Path::new(&run), ModelKind::Full, None)?;
    let episodes = read_dataset(std::path::Path::new(&data))?;
    let ep = slice_context(&episodes[0], context)?;
    let mid = ep.meta.midpoint;

    // Known prefix: observations 0..=mid with their aligned actions.
    let obs: Vec<_> = ep.observations[..=mid].iter().collect();
    let prefix = ContextBatch::new(
        &[(obs, ep.actions[..=mid].to_vec())],
        model.tokenizer.cfg.image_size,
        &model.device,
    )?;
    let future: Vec<u32> = ep.actions[mid..].iter().map(|a| a.index() as u32).collect();
    println!("imagining {} frames from a {}-frame prefix...", future.len(), mid + 1);
    let frames = model.imagine(&prefix, &[future], 0)?;

    for s in 0..frames.dims()[1] {
        let pred = frames.narrow(1, s, 1)?.squeeze(1)?;
        let pred = tensor_to_observations(&pred)?.remove(0);
        pred.save_png(&out.join(format!("step_{:02}_imagined.png", s + 1)))?;
        ep.observations[mid + 1 + s].save_png(&out.join(format!("step_{:02}_truth.png", s + 1)))?;
    }
    println!("imagined and ground-truth frames written to {}", out.display());
    Ok(())
}
