//! Long-context world model over a mirrored-trajectory gridworld.
//!
//! The model pairs two branches: a selective state-space (Mamba-style)
//! long-context branch that summarizes the whole interaction history into
//! compact per-frame features, and a short-window EDM diffusion branch that
//! renders the next observation conditioned on the last four frames, the
//! actions, and the fused state-space features. Episodes walk a maze forward
//! and then retrace the same path backwards, so the second half of every
//! sequence is predictable only through memory of the first half.
//!
//! Crate layout mirrors the pipeline:
//! - [`gridworld`]: procedural mazes, mirrored episodes, rendering, archives
//! - [`tokenizer`]: convolutional frame autoencoder producing features `f_t`
//! - [`ssm`]: selective scan core plus GRU/LSTM baseline cells
//! - [`long_context`]: the next-feature world model over `(f_t, a_t)`
//! - [`diffusion`]: EDM-preconditioned denoiser, fusion module, Heun sampler
//! - [`trainer`]: two-stage training protocol and checkpointing
//! - [`evalkit`]: forward-backward evaluation protocols, PSNR/SSIM, reports
//! - [`world`]: bundles trained checkpoints into a runnable world model

pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod gridworld;
pub mod init;
pub mod long_context;
pub mod optim;
pub mod ssm;
pub mod tokenizer;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
