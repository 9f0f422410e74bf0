//! Two-stage training protocol: (1) the long-context branch is trained on
//! long mirrored windows with teacher forcing; (2) with that branch frozen,
//! the generative branch is trained on 4-frame windows conditioned on the
//! fused features. The tokenizer is trained first and frozen throughout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Sidecar};
use crate::diffusion::{Denoiser, DenoiserConfig, FUSION_WINDOW};
use crate::error::{Error, Result};
use crate::gridworld::{read_dataset, slice_context, Episode};
use crate::long_context::{FeatureStats, LcbConfig, LongContextBranch};
use crate::optim::{Adam, AdamConfig};
use crate::tokenizer::{
    observations_to_tensor, train_tokenizer, Tokenizer, TokenizerConfig, TokenizerTrainOpts,
    TrainCurve,
};
use crate::world::{ModelKind, WorldModel};

/// Training stages, in their required order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Tokenizer,
    Lcb,
    Diffuser,
}

impl Stage {
    pub fn dir_name(self, ablate: bool) -> &'static str {
        match self {
            Stage::Tokenizer => "tokenizer",
            Stage::Lcb => "lcb",
            Stage::Diffuser => {
                if ablate {
                    "diffuser_ablate"
                } else {
                    "diffuser"
                }
            }
        }
    }
}

/// One training run's configuration; serialized next to every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Context length (actions per window) for stage 1 and for positioning
    /// stage-2 windows; the window itself is 4 frames.
    pub seq_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub iterations: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Train the generative branch with the memory half of the conditioning
    /// permanently zeroed (the short-context baseline model).
    #[serde(default)]
    pub ablate_state: bool,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub lcb: LcbConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/train"),
            seq_len: 16,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 1e-2,
            grad_clip: 10.0,
            iterations: 2000,
            seed: 0,
            eval_every: 200,
            ablate_state: false,
            tokenizer: TokenizerConfig::default(),
            lcb: LcbConfig::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len % 2 != 0 || self.seq_len < FUSION_WINDOW {
            return Err(Error::Config(format!(
                "seq_len must be even and >= {FUSION_WINDOW}, got {}",
                self.seq_len
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config("batch_size and iterations must be positive".into()));
        }
        if self.lcb.feature_dim != self.tokenizer.feature_dim
            || self.denoiser.feature_dim != self.tokenizer.feature_dim
        {
            return Err(Error::Config(
                "feature_dim must agree across tokenizer, lcb and denoiser configs".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

pub struct TrainOutputs {
    pub checkpoint_dir: PathBuf,
    pub curve: TrainCurve,
}

fn load_episodes(cfg: &RunConfig) -> Result<Vec<Episode>> {
    let eps = read_dataset(&cfg.dataset)?;
    if eps.is_empty() {
        return Err(Error::Invalid(format!("dataset {} is empty", cfg.dataset.display())));
    }
    Ok(eps)
}

/// Context windows used for training: each episode sliced to `seq_len`
/// actions around its midpoint, so every window is itself mirrored.
fn windows(episodes: &[Episode], seq_len: usize) -> Result<Vec<Episode>> {
    episodes.iter().map(|e| slice_context(e, seq_len)).collect()
}

/// Stage 0: train the frame autoencoder on all frames of the dataset.
pub fn train_stage_tokenizer(cfg: &RunConfig, out_root: &Path) -> Result<TrainOutputs> {
    cfg.validate()?;
    let device = Device::Cpu;
    let episodes = load_episodes(cfg)?;
    let frames: Vec<_> = episodes.iter().flat_map(|e| e.observations.iter()).collect();
    let opts = TokenizerTrainOpts {
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
        ..Default::default()
    };
    let (_model, varmap, curve) = train_tokenizer(&frames, cfg.tokenizer.clone(), &opts, &device)?;
    let dir = out_root.join(Stage::Tokenizer.dir_name(false));
    checkpoint::save_checkpoint(
        &dir,
        &varmap,
        "tokenizer",
        cfg.iterations,
        cfg.seed,
        cfg.to_json()?,
        BTreeMap::new(),
    )?;
    Ok(TrainOutputs { checkpoint_dir: dir, curve })
}

fn load_tokenizer(root: &Path, device: &Device) -> Result<(Tokenizer, Sidecar)> {
    let dir = root.join("tokenizer");
    let sidecar = checkpoint::read_sidecar(&dir).map_err(|_| {
        Error::MissingArtifact(format!(
            "tokenizer checkpoint at {} (run train-tokenizer first)",
            dir.display()
        ))
    })?;
    let cfg: RunConfig = serde_json::from_value(sidecar.config.clone())?;
    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let model = Tokenizer::new(cfg.tokenizer, vb)?;
    checkpoint::load_checkpoint(&dir, &mut varmap)?;
    Ok((model, sidecar))
}

fn load_lcb(root: &Path, device: &Device) -> Result<(LongContextBranch, FeatureStats, Sidecar)> {
    let dir = root.join("lcb");
    let sidecar = checkpoint::read_sidecar(&dir).map_err(|_| {
        Error::MissingArtifact(format!(
            "long-context checkpoint at {} (run train-lcb first)",
            dir.display()
        ))
    })?;
    let cfg: RunConfig = serde_json::from_value(sidecar.config.clone())?;
    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let model = LongContextBranch::new(cfg.lcb, vb)?;
    checkpoint::load_checkpoint(&dir, &mut varmap)?;
    let stats: FeatureStats =
        serde_json::from_slice(&std::fs::read(dir.join("feature_stats.json"))?)?;
    Ok((model, stats, sidecar))
}

/// Per-episode tensors reused across training iterations.
struct WindowCache {
    /// (T+1, D) tokenizer features.
    feats: Vec<Tensor>,
    /// (T+1, 3, H, W) images in [0,1].
    images: Vec<Tensor>,
    /// (T,) action codes.
    actions: Vec<Vec<u32>>,
}

fn build_cache(
    windows: &[Episode],
    tokenizer: &Tokenizer,
    device: &Device,
) -> Result<WindowCache> {
    let mut feats = Vec::with_capacity(windows.len());
    let mut images = Vec::with_capacity(windows.len());
    let mut actions = Vec::with_capacity(windows.len());
    for w in windows {
        let obs: Vec<_> = w.observations.iter().collect();
        let img = observations_to_tensor(&obs, tokenizer.cfg.image_size, device)?;
        // Detach: cached tensors must not retain their autograd graphs.
        feats.push(tokenizer.encode(&img)?.detach());
        images.push(img);
        actions.push(w.actions.iter().map(|a| a.index() as u32).collect());
    }
    Ok(WindowCache { feats, images, actions })
}

/// Stage 1: teacher-forced next-feature regression over mirrored windows.
/// Saves the checkpoint plus the per-dimension output statistics used by the
/// stage-2 fusion normalizer.
pub fn train_stage_lcb(cfg: &RunConfig, out_root: &Path) -> Result<TrainOutputs> {
    cfg.validate()?;
    let device = Device::Cpu;
    let (tokenizer, tok_sidecar) = load_tokenizer(out_root, &device)?;
    let episodes = load_episodes(cfg)?;
    let wins = windows(&episodes, cfg.seq_len)?;
    let cache = build_cache(&wins, &tokenizer, &device)?;

    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let model = LongContextBranch::new(cfg.lcb.clone(), vb)?;
    crate::init::deterministic_init(&varmap, cfg.seed)?;
    let mut opt = Adam::new(
        varmap.all_vars(),
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            grad_clip: Some(cfg.grad_clip),
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = TrainCurve::default();
    let t = cfg.seq_len;
    for it in 0..cfg.iterations {
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.gen_range(0..cache.feats.len())).collect();
        let feats = Tensor::stack(
            &idx.iter().map(|&i| cache.feats[i].narrow(0, 0, t)).collect::<candle_core::Result<Vec<_>>>()?,
            0,
        )?;
        let targets = Tensor::stack(
            &idx.iter().map(|&i| cache.feats[i].narrow(0, 1, t)).collect::<candle_core::Result<Vec<_>>>()?,
            0,
        )?;
        let actions = Tensor::from_vec(
            idx.iter().flat_map(|&i| cache.actions[i].iter().copied()).collect::<Vec<u32>>(),
            (idx.len(), t),
            &device,
        )?;
        let pred = model.forward(&feats.detach(), &actions)?;
        let loss = model.loss(&pred, &targets.detach())?;
        let loss_v = loss.to_scalar::<f32>()? as f64;
        if !loss_v.is_finite() {
            return Err(Error::Numeric(format!("lcb loss diverged at iteration {it}")));
        }
        let grads = loss.backward()?;
        opt.step(&grads)?;
        if it % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            curve.train.push((it, loss_v));
        }
    }

    // Output statistics for the fusion normalizer, over the training windows.
    let mut outputs = Vec::new();
    for i in 0..cache.feats.len() {
        let feats = cache.feats[i].narrow(0, 0, t)?.unsqueeze(0)?;
        let actions = Tensor::from_vec(cache.actions[i].clone(), (1, t), &device)?;
        outputs.push(model.forward(&feats, &actions)?.squeeze(0)?.detach());
    }
    let all = Tensor::cat(&outputs, 0)?;
    let stats = FeatureStats::from_features(&all)?;

    let dir = out_root.join(Stage::Lcb.dir_name(false));
    let mut upstream = BTreeMap::new();
    upstream.insert("tokenizer".to_string(), tok_sidecar.blob_sha256.clone());
    checkpoint::save_checkpoint(
        &dir,
        &varmap,
        "lcb",
        cfg.iterations,
        cfg.seed,
        cfg.to_json()?,
        upstream,
    )?;
    std::fs::write(dir.join("feature_stats.json"), serde_json::to_vec_pretty(&stats)?)?;
    Ok(TrainOutputs { checkpoint_dir: dir, curve })
}

/// Stage 2: EDM denoiser training on 4-frame windows inside mirrored
/// contexts, conditioned on frozen long-context features. Verifies the
/// freeze contract by hashing the stage-1 blob before and after.
pub fn train_stage_diffuser(cfg: &RunConfig, out_root: &Path) -> Result<TrainOutputs> {
    cfg.validate()?;
    let device = Device::Cpu;
    let (tokenizer, tok_sidecar) = load_tokenizer(out_root, &device)?;
    let (lcb, stats, lcb_sidecar) = load_lcb(out_root, &device)?;
    let lcb_hash_before = checkpoint::blob_sha256(&out_root.join("lcb"))?;

    let episodes = load_episodes(cfg)?;
    let wins = windows(&episodes, cfg.seq_len)?;
    let cache = build_cache(&wins, &tokenizer, &device)?;
    let t_len = cfg.seq_len;
    // Teacher-forced long-context outputs are fixed during stage 2;
    // precompute and normalize them once per window.
    let mut lcb_out_norm = Vec::with_capacity(cache.feats.len());
    for i in 0..cache.feats.len() {
        let feats = cache.feats[i].narrow(0, 0, t_len)?.unsqueeze(0)?;
        let actions = Tensor::from_vec(cache.actions[i].clone(), (1, t_len), &device)?;
        let out = lcb.forward(&feats, &actions)?.squeeze(0)?;
        lcb_out_norm.push(stats.normalize(&out)?.detach());
    }

    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let denoiser = Denoiser::new(cfg.denoiser.clone(), vb)?;
    crate::init::deterministic_init(&varmap, cfg.seed)?;
    let mut opt = Adam::new(
        varmap.all_vars(),
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            grad_clip: Some(cfg.grad_clip),
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = TrainCurve::default();
    let k = FUSION_WINDOW;
    let dir = out_root.join(Stage::Diffuser.dir_name(cfg.ablate_state));
    let mut upstream = BTreeMap::new();
    upstream.insert("tokenizer".to_string(), tok_sidecar.blob_sha256.clone());
    upstream.insert("lcb".to_string(), lcb_sidecar.blob_sha256.clone());

    for it in 0..cfg.iterations {
        // Shared target position for the batch; window start sampled uniformly.
        let t = rng.gen_range(k..=t_len); // predict observation index t
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.gen_range(0..cache.feats.len())).collect();
        let history = Tensor::stack(
            &idx.iter()
                .map(|&i| cache.images[i].narrow(0, t - k, k))
                .collect::<candle_core::Result<Vec<_>>>()?,
            0,
        )?;
        let b = idx.len();
        let hw = tokenizer.cfg.image_size;
        let history = ((history.reshape((b, 3 * k, hw, hw))? * 2.0)? - 1.0)?;
        let target = Tensor::stack(
            &idx.iter()
                .map(|&i| cache.images[i].narrow(0, t, 1))
                .collect::<candle_core::Result<Vec<_>>>()?,
            0,
        )?;
        let target = ((target.reshape((b, 3, hw, hw))? * 2.0)? - 1.0)?;
        let lcb_feats = Tensor::stack(
            &idx.iter()
                .map(|&i| lcb_out_norm[i].narrow(0, t - k, k))
                .collect::<candle_core::Result<Vec<_>>>()?,
            0,
        )?;
        let actions = Tensor::from_vec(
            idx.iter()
                .flat_map(|&i| cache.actions[i][t - k..t].iter().copied())
                .collect::<Vec<u32>>(),
            (b, k),
            &device,
        )?;
        let cond = denoiser.conditioning(
            &lcb_feats.detach(),
            &actions,
            cfg.ablate_state,
            Some(&mut rng),
        )?;
        let loss = denoiser.loss(&target.detach(), &history.detach(), &cond, &mut rng)?;
        let loss_v = loss.to_scalar::<f32>()? as f64;
        if !loss_v.is_finite() {
            return Err(Error::Numeric(format!(
                "diffuser loss diverged at iteration {it}; last checkpoint kept at {}",
                dir.display()
            )));
        }
        let grads = loss.backward()?;
        opt.step(&grads)?;
        if it % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            curve.train.push((it, loss_v));
            checkpoint::save_checkpoint(
                &dir,
                &varmap,
                Stage::Diffuser.dir_name(cfg.ablate_state),
                it,
                cfg.seed,
                cfg.to_json()?,
                upstream.clone(),
            )?;
        }
    }
    checkpoint::save_checkpoint(
        &dir,
        &varmap,
        Stage::Diffuser.dir_name(cfg.ablate_state),
        cfg.iterations,
        cfg.seed,
        cfg.to_json()?,
        upstream,
    )?;

    let lcb_hash_after = checkpoint::blob_sha256(&out_root.join("lcb"))?;
    if lcb_hash_before != lcb_hash_after {
        return Err(Error::Invalid(
            "freeze contract violated: stage-1 checkpoint changed during stage 2".into(),
        ));
    }
    Ok(TrainOutputs { checkpoint_dir: dir, curve })
}

/// Assembles a runnable world model from checkpoints. `lcb_root` lets a
/// different stage-1 checkpoint be swapped in at evaluation time without
/// retraining stage 2.
pub fn load_world_model(
    root: &Path,
    kind: ModelKind,
    lcb_root: Option<&Path>,
) -> Result<WorldModel> {
    let device = Device::Cpu;
    let (tokenizer, _) = load_tokenizer(root, &device)?;
    let (lcb, stats, _) = load_lcb(lcb_root.unwrap_or(root), &device)?;
    let denoiser = match kind {
        ModelKind::SsmOnly => None,
        ModelKind::Full | ModelKind::AblateState => {
            let dir = root.join(Stage::Diffuser.dir_name(kind.ablate_state()));
            let sidecar = checkpoint::read_sidecar(&dir).map_err(|_| {
                Error::MissingArtifact(format!(
                    "diffuser checkpoint at {} (run train-diffuser first)",
                    dir.display()
                ))
            })?;
            let cfg: RunConfig = serde_json::from_value(sidecar.config.clone())?;
            let mut varmap = VarMap::new();
            let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
            let model = Denoiser::new(cfg.denoiser, vb)?;
            checkpoint::load_checkpoint(&dir, &mut varmap)?;
            Some(model)
        }
    };
    Ok(WorldModel { tokenizer, lcb, stats, denoiser, kind, device })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{build_episode, write_dataset, MazeSpec, DEFAULT_PALETTE};

    fn tiny_dataset(dir: &Path) -> PathBuf {
        let spec = MazeSpec {
            size: 15,
            marker_count: 10,
            difficulty: 3,
            palette: DEFAULT_PALETTE.to_vec(),
            seed: 1,
        };
        let eps: Vec<_> = (0..2).map(|s| build_episode(&spec, s).unwrap()).collect();
        let root = dir.join("data");
        write_dataset(&root, &eps).unwrap();
        root
    }

    #[test]
    fn config_validation_catches_inconsistencies() {
        assert!(RunConfig { seq_len: 7, ..Default::default() }.validate().is_err());
        assert!(RunConfig { seq_len: 2, ..Default::default() }.validate().is_err());
        assert!(RunConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.lcb.feature_dim = cfg.tokenizer.feature_dim + 16;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn later_stages_require_upstream_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            dataset: tiny_dataset(dir.path()),
            iterations: 1,
            batch_size: 2,
            ..Default::default()
        };
        let err = train_stage_lcb(&cfg, dir.path()).map(|_| ()).unwrap_err();
        assert!(matches!(&err, Error::MissingArtifact(m) if m.contains("tokenizer")), "{err}");
        let err = train_stage_diffuser(&cfg, dir.path()).map(|_| ()).unwrap_err();
        assert!(matches!(&err, Error::MissingArtifact(m) if m.contains("tokenizer")), "{err}");
        let err =
            load_world_model(dir.path(), crate::world::ModelKind::Full, None).map(|_| ()).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }

    #[test]
    fn stage_directory_names() {
        assert_eq!(Stage::Tokenizer.dir_name(false), "tokenizer");
        assert_eq!(Stage::Lcb.dir_name(true), "lcb");
        assert_eq!(Stage::Diffuser.dir_name(false), "diffuser");
        assert_eq!(Stage::Diffuser.dir_name(true), "diffuser_ablate");
    }
}
