//! Bundles the trained pieces (tokenizer, long-context branch, denoiser)
//! into a runnable world model and implements next-frame prediction and
//! autoregressive imagination over observation/action contexts.

use candle_core::{Device, IndexOp, Tensor};
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::gridworld::{Action, Observation};
use crate::long_context::{FeatureStats, LongContextBranch};
use crate::tokenizer::{observations_to_tensor, tensor_to_observations, Tokenizer};

/// Which prediction path a bundled model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Diffusion conditioned on fused long-context features.
    Full,
    /// Diffusion with the memory half of the conditioning zeroed
    /// (the short-context baseline).
    AblateState,
    /// Long-context branch alone; predictions are decoded features.
    SsmOnly,
}

impl ModelKind {
    pub fn ablate_state(self) -> bool {
        matches!(self, ModelKind::AblateState)
    }

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Full => "full",
            ModelKind::AblateState => "ablate_state",
            ModelKind::SsmOnly => "ssm_only",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelKind::Full),
            "ablate_state" | "ablate-state" => Ok(ModelKind::AblateState),
            "ssm_only" | "ssm-only" | "ssm" => Ok(ModelKind::SsmOnly),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

pub struct WorldModel {
    pub tokenizer: Tokenizer,
    pub lcb: LongContextBranch,
    pub stats: FeatureStats,
    pub denoiser: Option<Denoiser>,
    pub kind: ModelKind,
    pub device: Device,
}

/// A batch of equally sized observation/action contexts.
pub struct ContextBatch {
    /// (B, T, 3, H, W) images in [0,1].
    pub images: Tensor,
    /// (B, T) action codes; `actions[t]` is taken at frame t.
    pub actions: Tensor,
}

impl ContextBatch {
    pub fn new(
        contexts: &[(Vec<&Observation>, Vec<Action>)],
        image_size: usize,
        device: &Device,
    ) -> Result<ContextBatch> {
        let t = contexts
            .first()
            .map(|(o, _)| o.len())
            .ok_or_else(|| Error::Invalid("empty context batch".into()))?;
        let mut all_obs = Vec::new();
        let mut all_actions = Vec::new();
        for (obs, actions) in contexts {
            if obs.len() != t || actions.len() != t {
                return Err(Error::Shape(format!(
                    "context expects {t} observations and {t} actions, got {} and {}",
                    obs.len(),
                    actions.len()
                )));
            }
            all_obs.extend(obs.iter().copied());
            all_actions.extend(actions.iter().map(|a| a.index() as u32));
        }
        let b = contexts.len();
        let images = observations_to_tensor(&all_obs, image_size, device)?
            .reshape((b, t, 3, image_size, image_size))?;
        let actions = Tensor::from_vec(all_actions, (b, t), device)?;
        Ok(ContextBatch { images, actions })
    }

    pub fn len(&self) -> usize {
        self.images.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> usize {
        self.images.dims()[1]
    }

    /// Appends one frame (B,3,H,W) and its action codes to every context.
    pub fn push(&mut self, frames: &Tensor, actions: &[u32]) -> Result<()> {
        let b = self.len();
        self.images = Tensor::cat(&[&self.images, &frames.unsqueeze(1)?], 1)?;
        let a = Tensor::from_vec(actions.to_vec(), (b, 1), self.actions.device())?;
        self.actions = Tensor::cat(&[&self.actions, &a], 1)?;
        Ok(())
    }
}

impl WorldModel {
    /// Tokenizer features for every frame: (B, T, 3, H, W) -> (B, T, D).
    pub fn encode_frames(&self, images: &Tensor) -> Result<Tensor> {
        let (b, t, c, h, w) = images.dims5()?;
        let flat = images.reshape((b * t, c, h, w))?;
        let feats = self.tokenizer.encode(&flat)?;
        Ok(feats.reshape((b, t, self.tokenizer.cfg.feature_dim))?)
    }

    /// Predicts the frame after the context: consumes all T steps through the
    /// long-context branch, conditions the denoiser on the last 4 frames and
    /// fused features, and samples with the Heun ladder. Returns (B,3,H,W)
    /// images in [0,1]. Deterministic given the seed.
    pub fn predict_next_frames(&self, ctx: &ContextBatch, seed: u64) -> Result<Tensor> {
        self.predict_next_frames_with_history(ctx, &ctx.images, seed)
    }

    /// Like [`predict_next_frames`](Self::predict_next_frames) but with a
    /// separate image tensor feeding the denoiser's 4-frame history. Used by
    /// the noise-robustness protocol to corrupt the long-context inputs while
    /// keeping the short-window history clean (or vice versa).
    pub fn predict_next_frames_with_history(
        &self,
        ctx: &ContextBatch,
        hist_images: &Tensor,
        seed: u64,
    ) -> Result<Tensor> {
        let t = ctx.steps();
        let feats = self.encode_frames(&ctx.images)?;
        let lcb_out = self.lcb.forward(&feats, &ctx.actions)?; // (B,T,D)
        if self.kind == ModelKind::SsmOnly {
            let last = lcb_out.i((.., t - 1))?.contiguous()?;
            // Inference only: drop the autograd graph so callers can cache.
            return Ok(self.tokenizer.decode(&last)?.detach());
        }
        let denoiser = self
            .denoiser
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact("denoiser checkpoint".into()))?;
        let k = denoiser.cfg.window;
        if t < k {
            return Err(Error::Invalid(format!("context of {t} frames is shorter than window {k}")));
        }
        let last4 = lcb_out.narrow(1, t - k, k)?;
        let (b, _, d) = last4.dims3()?;
        let last4_norm = self
            .stats
            .normalize(&last4.reshape((b * k, d))?)?
            .reshape((b, k, d))?;
        let act4 = ctx.actions.narrow(1, t - k, k)?.contiguous()?;
        let cond = denoiser.conditioning(&last4_norm, &act4, self.kind.ablate_state(), None)?;
        let hist = hist_images.narrow(1, t - k, k)?.reshape((
            b,
            3 * k,
            denoiser.cfg.image_size,
            denoiser.cfg.image_size,
        ))?;
        let hist = ((hist * 2.0)? - 1.0)?;
        let sampled = denoiser.sample(&hist, &cond, denoiser.cfg.schedule.steps, seed)?;
        Ok(((sampled + 1.0)? / 2.0)?.clamp(0.0, 1.0)?.detach())
    }

    /// Autoregressive imagination: starting from a prefix context, generates
    /// `future_actions.len()` frames, feeding each generated frame back into
    /// the history (re-encoded by the tokenizer on the next step).
    /// `future_actions[j]` per context element is taken at the last known
    /// frame before generating frame j. Returns (B, horizon, 3, H, W).
    pub fn imagine(
        &self,
        prefix: &ContextBatch,
        future_actions: &[Vec<u32>],
        seed: u64,
    ) -> Result<Tensor> {
        let b = prefix.len();
        let horizon = future_actions.first().map_or(0, |f| f.len());
        if future_actions.len() != b || future_actions.iter().any(|f| f.len() != horizon) {
            return Err(Error::Shape("future action lists must be equal length".into()));
        }
        let mut frames = Vec::with_capacity(horizon);
        let mut ctx = ContextBatch {
            images: prefix.images.clone(),
            actions: prefix.actions.clone(),
        };
        for j in 0..horizon {
            let acts: Vec<u32> = future_actions.iter().map(|f| f[j]).collect();
            // The prefix batch carries a placeholder action at its last frame;
            // replace it with the action actually taken now.
            let t = ctx.steps();
            let a = Tensor::from_vec(acts.clone(), (b, 1), &self.device)?;
            let head = ctx.actions.narrow(1, 0, t - 1)?;
            ctx.actions = Tensor::cat(&[&head, &a], 1)?;
            let next = self.predict_next_frames(&ctx, seed.wrapping_add(j as u64))?;
            frames.push(next.clone());
            ctx.push(&next, &acts)?;
        }
        if frames.is_empty() {
            let hw = self.tokenizer.cfg.image_size;
            return Ok(Tensor::zeros((b, 0, 3, hw, hw), prefix.images.dtype(), &self.device)?);
        }
        Ok(Tensor::stack(&frames, 1)?)
    }

    /// Single-episode convenience wrapper for the streaming/rollout CLI:
    /// predicts the observation after `obs`, where `actions[t]` is the action
    /// taken at `obs[t]` (so `actions` has the same length as `obs`).
    pub fn predict_next(
        &self,
        obs: &[&Observation],
        actions: &[Action],
        seed: u64,
    ) -> Result<Observation> {
        let ctx = ContextBatch::new(
            &[(obs.to_vec(), actions.to_vec())],
            self.tokenizer.cfg.image_size,
            &self.device,
        )?;
        let out = self.predict_next_frames(&ctx, seed)?;
        Ok(tensor_to_observations(&out)?.remove(0))
    }

    /// Decodes teacher-forced long-context predictions for every step:
    /// (B, T, 3, H, W) images of f-hat_{2..T+1}. The standalone SSM baseline's
    /// render path.
    pub fn lcb_decoded_predictions(&self, ctx: &ContextBatch) -> Result<Tensor> {
        let (b, t) = (ctx.len(), ctx.steps());
        let feats = self.encode_frames(&ctx.images)?;
        let lcb_out = self.lcb.forward(&feats, &ctx.actions)?;
        let d = self.tokenizer.cfg.feature_dim;
        let hw = self.tokenizer.cfg.image_size;
        let decoded = self.tokenizer.decode(&lcb_out.reshape((b * t, d))?)?;
        Ok(decoded.reshape((b, t, 3, hw, hw))?.detach())
    }
}
