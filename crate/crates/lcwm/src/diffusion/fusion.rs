//! Fusion of long-context features and action embeddings into the denoiser's
//! conditioning vector: each path through its own two-layer SiLU MLP, then
//! concatenation. The zero-state ablation replaces the (normalized) memory
//! features with zeros before its MLP, isolating the memory contribution.

use candle_core::Tensor;
use candle_nn::ops::silu;
use candle_nn::{linear, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The last-4 window both paths consume.
pub const FUSION_WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Long-context feature width D (per frame).
    pub feature_dim: usize,
    /// Generative-branch action embedding width (per step).
    pub action_dim: usize,
    /// Output width of each MLP; the conditioning vector is twice this.
    pub hidden: usize,
}

impl FusionConfig {
    pub fn cond_dim(&self) -> usize {
        2 * self.hidden
    }
}

pub struct Fusion {
    mlp_m: (Linear, Linear),
    mlp_a: (Linear, Linear),
    pub cfg: FusionConfig,
}

impl Fusion {
    pub fn new(cfg: FusionConfig, vb: VarBuilder) -> Result<Self> {
        let m_in = cfg.feature_dim * FUSION_WINDOW;
        let a_in = cfg.action_dim * FUSION_WINDOW;
        let mlp_m = (
            linear(m_in, cfg.hidden, vb.pp("mem0"))?,
            linear(cfg.hidden, cfg.hidden, vb.pp("mem1"))?,
        );
        let mlp_a = (
            linear(a_in, cfg.hidden, vb.pp("act0"))?,
            linear(cfg.hidden, cfg.hidden, vb.pp("act1"))?,
        );
        Ok(Self { mlp_m, mlp_a, cfg })
    }

    /// `lcb_feats`: (B, 4, D) normalized long-context features;
    /// `action_embeds`: (B, 4, A). Returns the (B, 2*hidden) conditioning
    /// vector. With `ablate_state` the memory MLP sees zeros.
    pub fn forward(
        &self,
        lcb_feats: &Tensor,
        action_embeds: &Tensor,
        ablate_state: bool,
    ) -> Result<Tensor> {
        let (b, k, d) = lcb_feats.dims3()?;
        if k != FUSION_WINDOW || d != self.cfg.feature_dim {
            return Err(Error::Shape(format!(
                "fusion expects (B,{FUSION_WINDOW},{}) features, got ({b},{k},{d})",
                self.cfg.feature_dim
            )));
        }
        let (ab, ak, aa) = action_embeds.dims3()?;
        if ab != b || ak != FUSION_WINDOW || aa != self.cfg.action_dim {
            return Err(Error::Shape(format!(
                "fusion expects (B,{FUSION_WINDOW},{}) action embeddings, got ({ab},{ak},{aa})",
                self.cfg.action_dim
            )));
        }
        let m_in = if ablate_state {
            Tensor::zeros((b, FUSION_WINDOW * d), lcb_feats.dtype(), lcb_feats.device())?
        } else {
            lcb_feats.reshape((b, FUSION_WINDOW * d))?
        };
        let a_in = action_embeds.reshape((b, FUSION_WINDOW * aa))?;
        let m = self.mlp_m.1.forward(&silu(&self.mlp_m.0.forward(&m_in)?)?)?;
        let a = self.mlp_a.1.forward(&silu(&self.mlp_a.0.forward(&a_in)?)?)?;
        Ok(Tensor::cat(&[m, a], 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::{VarBuilder, VarMap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build() -> Fusion {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let f = Fusion::new(FusionConfig { feature_dim: 8, action_dim: 6, hidden: 10 }, vb.pp("f")).unwrap();
        crate::init::deterministic_init(&varmap, 0).unwrap();
        f
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::diffusion::randn_tensor(&mut rng, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn output_width_is_twice_hidden() {
        let f = build();
        let out = f.forward(&randn(&[3, 4, 8], 1), &randn(&[3, 4, 6], 2), false).unwrap();
        assert_eq!(out.dims(), &[3, f.cfg.cond_dim()]);
    }

    #[test]
    fn ablation_ignores_memory_features() {
        let f = build();
        let acts = randn(&[2, 4, 6], 3);
        let a = f.forward(&randn(&[2, 4, 8], 4), &acts, true).unwrap();
        let b = f.forward(&randn(&[2, 4, 8], 5), &acts, true).unwrap();
        let dev = (a.clone() - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(dev, 0.0, "ablated fusion must not depend on memory features");
        // Without ablation the same feature change must matter.
        let c = f.forward(&randn(&[2, 4, 8], 4), &acts, false).unwrap();
        let d = f.forward(&randn(&[2, 4, 8], 5), &acts, false).unwrap();
        let dev = (c - d).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(dev > 0.0);
        // The action half still matters under ablation.
        let e = f.forward(&randn(&[2, 4, 8], 4), &randn(&[2, 4, 6], 7), true).unwrap();
        let dev = (a - e).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(dev > 0.0);
    }

    #[test]
    fn rejects_wrong_window_or_widths() {
        let f = build();
        assert!(f.forward(&randn(&[2, 3, 8], 1), &randn(&[2, 4, 6], 2), false).is_err());
        assert!(f.forward(&randn(&[2, 4, 9], 1), &randn(&[2, 4, 6], 2), false).is_err());
        assert!(f.forward(&randn(&[2, 4, 8], 1), &randn(&[2, 4, 5], 2), false).is_err());
        assert!(f.forward(&randn(&[2, 4, 8], 1), &randn(&[3, 4, 6], 2), false).is_err());
    }
}
