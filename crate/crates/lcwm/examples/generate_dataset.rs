//! Generates a small dataset of mirrored maze episodes, verifies the mirror
//! invariant, and writes the first episode's frames as PNGs.
//!
//!     cargo run --release --example generate_dataset -- out/dataset

use lcwm::gridworld::{
    build_episode, mirror_actions, write_dataset, MazeSpec, DEFAULT_PALETTE,
};

fn main() -> lcwm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/dataset".into());
    let spec = MazeSpec {
        size: 21,
        marker_count: 40,
        difficulty: 3,
        palette: DEFAULT_PALETTE.to_vec(),
        seed: 0,
    };

    let episodes: Vec<_> = (0..8)
        .map(|seed| build_episode(&spec, seed))
        .collect::<lcwm::Result<Vec<_>>>()?;

    for ep in &episodes {
        let mid = ep.meta.midpoint;
        // The agent retraces its path, so the second half of every episode
        // repeats the first half in reverse — bit-exactly.
        for k in 0..=mid {
            assert_eq!(ep.observations[mid + k], ep.observations[mid - k]);
            assert_eq!(ep.poses[mid + k], ep.poses[mid - k]);
        }
        // And the action list is its own mirror.
        let forward = &ep.actions[..mid];
        assert_eq!(mirror_actions(forward), ep.actions[mid..]);
    }
    println!(
        "built {} episodes of {} observations each; mirror invariant holds",
        episodes.len(),
        episodes[0].observations.len()
    );

    let root = std::path::Path::new(&out);
    write_dataset(root, &episodes)?;
    println!("dataset written to {}", root.display());

    let frames_dir = root.join("frames_ep0");
    std::fs::create_dir_all(&frames_dir)?;
    for (i, obs) in episodes[0].observations.iter().enumerate().step_by(10) {
        obs.save_png(&frames_dir.join(format!("step_{i:03}.png")))?;
    }
    println!("sample frames in {}", frames_dir.display());
    Ok(())
}
