//! Long-context branch: the state-space world model. Consumes `(f_t, a_t)`
//! pairs over the whole history and predicts the next-frame feature at every
//! step. Doubles as the standalone SSM baseline when its predictions are
//! decoded directly.

use candle_core::{DType, Device, IndexOp, Tensor};
use candle_nn::{embedding, linear, Embedding, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{Backbone, BackboneKind, BackboneState, SsmConfig};

/// Number of discrete actions (compass moves).
pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcbConfig {
    /// Tokenizer feature width D.
    pub feature_dim: usize,
    /// Learnable action embedding width.
    pub action_dim: usize,
    pub backbone: BackboneKind,
    pub ssm: SsmConfig,
}

impl Default for LcbConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            action_dim: 16,
            backbone: BackboneKind::Mamba,
            ssm: SsmConfig::default(),
        }
    }
}

impl LcbConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssm.validate()?;
        if self.feature_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config("lcb dims must be positive".into()));
        }
        Ok(())
    }
}

pub struct LongContextBranch {
    embed: Embedding,
    in_proj: Linear,
    backbone: Backbone,
    head: Linear,
    pub cfg: LcbConfig,
}

/// Streaming evaluation state; constant-size regardless of steps consumed.
pub struct LcbStream {
    state: BackboneState,
}

impl LcbStream {
    pub fn state(&self) -> &BackboneState {
        &self.state
    }
}

impl LongContextBranch {
    pub fn new(cfg: LcbConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let embed = embedding(NUM_ACTIONS, cfg.action_dim, vb.pp("action_embed"))?;
        let in_proj = linear(
            cfg.feature_dim + cfg.action_dim,
            cfg.ssm.model_dim,
            vb.pp("in_proj"),
        )?;
        let backbone = Backbone::new(cfg.backbone, cfg.ssm.clone(), vb.pp("backbone"))?;
        let head = linear(cfg.ssm.model_dim, cfg.feature_dim, vb.pp("head"))?;
        Ok(Self { embed, in_proj, backbone, head, cfg })
    }

    pub fn backbone_kind(&self) -> BackboneKind {
        self.backbone.kind()
    }

    /// Teacher-forced forward pass. `features`: (B, T, D) tokenizer features,
    /// `actions`: (B, T) u32 codes; output (B, T, D) where step t predicts
    /// the feature of observation t+1. Causal.
    pub fn forward(&self, features: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let (b, t, d) = features.dims3()?;
        if d != self.cfg.feature_dim {
            return Err(Error::Shape(format!(
                "lcb expects feature dim {}, got {d}",
                self.cfg.feature_dim
            )));
        }
        let (ab, at) = actions.dims2()?;
        if ab != b || at != t {
            return Err(Error::Shape(format!(
                "actions ({ab},{at}) do not match features ({b},{t})"
            )));
        }
        let emb = self.embed.forward(actions)?; // (B, T, A)
        let x = Tensor::cat(&[features, &emb], 2)?;
        let x = self.in_proj.forward(&x)?;
        let y = self.backbone.forward_seq(&x)?;
        Ok(self.head.forward(&y)?)
    }

    /// Mean squared error between predictions and target features.
    pub fn loss(&self, predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
        if predicted.dims() != target.dims() {
            return Err(Error::Shape(format!(
                "loss shapes differ: {:?} vs {:?}",
                predicted.dims(),
                target.dims()
            )));
        }
        Ok((predicted - target)?.sqr()?.mean_all()?)
    }

    pub fn start_stream(&self, device: &Device, dtype: DType) -> Result<LcbStream> {
        Ok(LcbStream { state: self.backbone.init_state(&self.cfg.ssm, device, dtype)? })
    }

    /// One streaming step: feature (D,) plus action code -> predicted next
    /// feature (D,). Matches the batched forward pass step for step.
    pub fn stream_step(&self, stream: &mut LcbStream, feature: &Tensor, action: u32) -> Result<Tensor> {
        let action_t = Tensor::from_vec(vec![action], 1, feature.device())?;
        let emb = self.embed.forward(&action_t)?.squeeze(0)?.to_dtype(feature.dtype())?;
        let x = Tensor::cat(&[feature, &emb], 0)?;
        let x = self.in_proj.forward(&x.unsqueeze(0)?)?.squeeze(0)?;
        let y = self.backbone.step(&mut stream.state, &x)?;
        Ok(self.head.forward(&y.unsqueeze(0)?)?.squeeze(0)?)
    }
}

/// Per-dimension feature statistics from the stage-1 training set; used to
/// normalize long-context features before the fusion MLP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    /// Column statistics of an (N, D) feature tensor.
    pub fn from_features(features: &Tensor) -> Result<FeatureStats> {
        let (_n, d) = features.dims2()?;
        let mean = features.mean(0)?;
        let centered = features.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean(0)?;
        let std = (var + 1e-6)?.sqrt()?;
        let stats = FeatureStats { mean: mean.to_vec1()?, std: std.to_vec1()? };
        debug_assert_eq!(stats.mean.len(), d);
        Ok(stats)
    }

    pub fn normalize(&self, features: &Tensor) -> Result<Tensor> {
        let device = features.device();
        let d = self.mean.len();
        let mean = Tensor::from_vec(self.mean.clone(), d, device)?.to_dtype(features.dtype())?;
        let std = Tensor::from_vec(self.std.clone(), d, device)?.to_dtype(features.dtype())?;
        Ok(features.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }
}

/// Extracts (B,) slices of a (B, T, D) tensor at step `t`, contiguous.
pub fn step_slice(xs: &Tensor, t: usize) -> Result<Tensor> {
    Ok(xs.i((.., t))?.contiguous()?)
}
