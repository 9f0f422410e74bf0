//! Evaluation toolkit: PSNR/SSIM metrics, forward-backward prediction
//! protocols (teacher-forced and imagination), recall curves, noise
//! robustness, context-length generalization, seed stability, and plots.

mod metrics;
mod plot;
mod protocol;

pub use metrics::{psnr, ssim, MetricsReport, PSNR_CAP};
pub use plot::{line_plot, Series};
pub use protocol::{
    episode_seeds, eval_imagination, eval_next_frame, generalization_eval, noise_robustness,
    recall_curve, seed_stability, NoiseConfig, NoiseReport, NoiseScale, NoiseTarget, RecallCurve,
    SeedStability,
};
