//! The generative branch: an EDM-preconditioned denoiser over the next frame,
//! conditioned on the last 4 frames, their action embeddings, and the fused
//! long-context features.

use candle_core::{DType, Tensor};
use candle_nn::{embedding, Embedding, Module, VarBuilder};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edm::{precondition, EdmSchedule};
use super::fusion::{Fusion, FusionConfig, FUSION_WINDOW};
use super::randn_tensor;
use super::unet::{Unet, UnetConfig};
use crate::error::{Error, Result};
use crate::long_context::NUM_ACTIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Frame history window K; fixed to 4 by the fusion layout.
    pub window: usize,
    pub image_size: usize,
    /// Long-context feature width D.
    pub feature_dim: usize,
    /// Generative-branch action embedding width.
    pub action_dim: usize,
    /// Per-path fusion MLP width; conditioning vector is twice this.
    pub fusion_hidden: usize,
    /// UNet channel widths.
    pub widths: [usize; 3],
    pub emb_dim: usize,
    pub schedule: EdmSchedule,
    /// Std of the Gaussian perturbation on action embeddings (training only).
    pub action_noise_std: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            window: FUSION_WINDOW,
            image_size: 32,
            feature_dim: 64,
            action_dim: 512,
            fusion_hidden: 128,
            widths: [32, 48, 64],
            emb_dim: 128,
            schedule: EdmSchedule::default(),
            action_noise_std: 0.05,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window != FUSION_WINDOW {
            return Err(Error::Config(format!(
                "history window is fixed to {FUSION_WINDOW}, got {}",
                self.window
            )));
        }
        if self.schedule.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if self.widths.iter().any(|w| w % 8 != 0) {
            return Err(Error::Config("unet widths must be divisible by 8".into()));
        }
        Ok(())
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.fusion_hidden
    }
}

pub struct Denoiser {
    unet: Unet,
    fusion: Fusion,
    act_embed: Embedding,
    pub cfg: DenoiserConfig,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let unet = Unet::new(
            UnetConfig {
                in_channels: 3 + 3 * cfg.window,
                widths: cfg.widths,
                emb_dim: cfg.emb_dim,
                cond_dim: cfg.cond_dim(),
            },
            vb.pp("unet"),
        )?;
        let fusion = Fusion::new(
            FusionConfig {
                feature_dim: cfg.feature_dim,
                action_dim: cfg.action_dim,
                hidden: cfg.fusion_hidden,
            },
            vb.pp("fusion"),
        )?;
        let act_embed = embedding(NUM_ACTIONS, cfg.action_dim, vb.pp("act_embed"))?;
        Ok(Self { unet, fusion, act_embed, cfg })
    }

    /// Builds the fused conditioning vector from normalized long-context
    /// features (B, 4, D) and the last-4 action codes (B, 4). During training
    /// the action embeddings are perturbed with Gaussian noise.
    pub fn conditioning(
        &self,
        lcb_feats_norm: &Tensor,
        actions: &Tensor,
        ablate_state: bool,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let mut emb = self.act_embed.forward(actions)?; // (B, 4, A)
        if let Some(rng) = train_rng {
            if self.cfg.action_noise_std > 0.0 {
                let noise = randn_tensor(rng, emb.dims(), emb.device())?;
                emb = (emb + (noise * self.cfg.action_noise_std)?)?;
            }
        }
        self.fusion.forward(lcb_feats_norm, &emb, ablate_state)
    }

    /// D(x; sigma) = c_skip*x + c_out*F(c_in*x, c_noise, cond) with per-sample
    /// sigmas. `noisy`: (B,3,H,W) in the [-1,1] image domain; `history`:
    /// (B, 3K, H, W); `sigmas`: per-sample noise levels.
    pub fn denoise(
        &self,
        noisy: &Tensor,
        sigmas: &[f64],
        history: &Tensor,
        cond: &Tensor,
    ) -> Result<Tensor> {
        let (b, c, h, w) = noisy.dims4()?;
        if c != 3 || h != self.cfg.image_size || w != self.cfg.image_size {
            return Err(Error::Shape(format!(
                "denoise expects (B,3,{0},{0}), got ({b},{c},{h},{w})",
                self.cfg.image_size
            )));
        }
        if sigmas.len() != b {
            return Err(Error::Shape(format!("{} sigmas for batch {b}", sigmas.len())));
        }
        let sum = noisy.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !sum.is_finite() {
            return Err(Error::Numeric("non-finite denoiser input".into()));
        }
        let mut c_skip = Vec::with_capacity(b);
        let mut c_out = Vec::with_capacity(b);
        let mut c_in = Vec::with_capacity(b);
        let mut c_noise = Vec::with_capacity(b);
        for &s in sigmas {
            let p = precondition(s, self.cfg.schedule.sigma_data)?;
            c_skip.push(p.c_skip as f32);
            c_out.push(p.c_out as f32);
            c_in.push(p.c_in as f32);
            c_noise.push(p.c_noise as f32);
        }
        let dev = noisy.device();
        let dt = noisy.dtype();
        let per = |v: Vec<f32>| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, (b, 1, 1, 1), dev)?.to_dtype(dt)?)
        };
        let (t_skip, t_out, t_in) = (per(c_skip)?, per(c_out)?, per(c_in)?);
        let t_noise = Tensor::from_vec(c_noise, b, dev)?.to_dtype(dt)?;
        let net_in = Tensor::cat(&[&noisy.broadcast_mul(&t_in)?, history], 1)?;
        let f = self.unet.forward(&net_in, &t_noise, cond)?;
        Ok((noisy.broadcast_mul(&t_skip)? + f.broadcast_mul(&t_out)?)?)
    }

    /// EDM training loss over one batch: sigma ~ lognormal(p_mean, p_std),
    /// weight (sigma^2+sd^2)/(sigma*sd)^2. `target` in [-1,1].
    pub fn loss(
        &self,
        target: &Tensor,
        history: &Tensor,
        cond: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let b = target.dims4()?.0;
        let sigmas: Vec<f64> =
            (0..b).map(|_| self.cfg.schedule.sample_sigma(rng)).collect();
        let noise = randn_tensor(rng, target.dims(), target.device())?.to_dtype(target.dtype())?;
        let sigma_t = Tensor::from_vec(
            sigmas.iter().map(|&s| s as f32).collect::<Vec<_>>(),
            (b, 1, 1, 1),
            target.device(),
        )?
        .to_dtype(target.dtype())?;
        let noisy = (target + noise.broadcast_mul(&sigma_t)?)?;
        let den = self.denoise(&noisy, &sigmas, history, cond)?;
        let weights: Vec<f32> = sigmas
            .iter()
            .map(|&s| super::edm::loss_weight(s, self.cfg.schedule.sigma_data) as f32)
            .collect();
        let w = Tensor::from_vec(weights, (b, 1, 1, 1), target.device())?
            .to_dtype(target.dtype())?;
        Ok((den - target)?.sqr()?.broadcast_mul(&w)?.mean_all()?)
    }

    /// Deterministic Heun sampler over the rho-spaced sigma ladder. Returns a
    /// next-frame estimate in [-1,1]. Deterministic given the seed.
    pub fn sample(
        &self,
        history: &Tensor,
        cond: &Tensor,
        steps: usize,
        seed: u64,
    ) -> Result<Tensor> {
        use rand::SeedableRng;
        let b = history.dims4()?.0;
        let shape = (b, 3, self.cfg.image_size, self.cfg.image_size);
        let schedule = EdmSchedule { steps, ..self.cfg.schedule.clone() };
        let ladder = schedule.sigma_ladder();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = randn_tensor(&mut rng, &[shape.0, shape.1, shape.2, shape.3], history.device())?
            .to_dtype(history.dtype())?;
        let mut x = (noise * ladder[0])?;
        for i in 0..ladder.len() - 1 {
            let (s_cur, s_next) = (ladder[i], ladder[i + 1]);
            let den = self.denoise(&x, &vec![s_cur; b], history, cond)?;
            let d = ((&x - den)? / s_cur)?;
            let x_euler = (&x + (&d * (s_next - s_cur))?)?;
            if s_next > 0.0 {
                let den2 = self.denoise(&x_euler, &vec![s_next; b], history, cond)?;
                let d2 = ((&x_euler - den2)? / s_next)?;
                x = (&x + ((d + d2)? * (0.5 * (s_next - s_cur)))?)?;
            } else {
                x = x_euler;
            }
            // Sampling never backpropagates; dropping the graph keeps memory
            // constant across ladder steps.
            x = x.detach();
        }
        Ok(x.clamp(-1.0, 1.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use candle_nn::{VarBuilder, VarMap};
    use rand::SeedableRng;

    fn small_cfg() -> DenoiserConfig {
        DenoiserConfig {
            feature_dim: 16,
            action_dim: 8,
            fusion_hidden: 16,
            widths: [8, 8, 16],
            emb_dim: 16,
            ..Default::default()
        }
    }

    fn build(seed: u64) -> Denoiser {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let d = Denoiser::new(small_cfg(), vb.pp("d")).unwrap();
        crate::init::deterministic_init(&varmap, seed).unwrap();
        d
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        super::super::randn_tensor(&mut rng, shape, &Device::Cpu).unwrap()
    }

    fn inputs(b: usize) -> (Tensor, Tensor, Tensor) {
        let cfg = small_cfg();
        let hist = randn(&[b, 3 * cfg.window, 32, 32], 10);
        let feats = randn(&[b, 4, cfg.feature_dim], 11);
        let acts = Tensor::from_vec(
            (0..b * 4).map(|i| (i % 4) as u32).collect::<Vec<_>>(),
            (b, 4),
            &Device::Cpu,
        )
        .unwrap();
        (hist, feats, acts)
    }

    #[test]
    fn zero_initialized_network_denoises_to_skip_scaled_input() {
        // At init the UNet output head is zeroed, so D(x; sigma) = c_skip * x
        // exactly; this pins the preconditioning wiring.
        let d = build(0);
        let (hist, feats, acts) = inputs(2);
        let cond = d.conditioning(&feats, &acts, false, None).unwrap();
        let x = randn(&[2, 3, 32, 32], 12);
        for sigma in [0.01, 0.5, 5.0] {
            let den = d.denoise(&x, &[sigma, sigma], &hist, &cond).unwrap();
            let p = precondition(sigma, d.cfg.schedule.sigma_data).unwrap();
            let want = (&x * p.c_skip).unwrap();
            let dev = (den - want).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(dev <= 1e-6, "sigma {sigma}: dev {dev}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let d = build(1);
        let (hist, feats, acts) = inputs(1);
        let cond = d.conditioning(&feats, &acts, false, None).unwrap();
        let a = d.sample(&hist, &cond, 5, 42).unwrap();
        let b = d.sample(&hist, &cond, 5, 42).unwrap();
        let dev = (a.clone() - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(dev, 0.0);
        let c = d.sample(&hist, &cond, 5, 43).unwrap();
        let dev = (a - c).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(dev > 0.0, "different seeds should draw different noise");
    }

    #[test]
    fn samples_stay_in_image_range() {
        let d = build(2);
        let (hist, feats, acts) = inputs(2);
        let cond = d.conditioning(&feats, &acts, false, None).unwrap();
        let x = d.sample(&hist, &cond, 3, 0).unwrap();
        assert_eq!(x.dims(), &[2, 3, 32, 32]);
        let v = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&p| (-1.0..=1.0).contains(&p)));
    }

    #[test]
    fn loss_is_finite_and_seed_deterministic() {
        let d = build(3);
        let (hist, feats, acts) = inputs(2);
        let cond = d.conditioning(&feats, &acts, false, None).unwrap();
        let target = randn(&[2, 3, 32, 32], 13).clamp(-1.0, 1.0).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let l1 = d.loss(&target, &hist, &cond, &mut r1).unwrap().to_scalar::<f32>().unwrap();
        let l2 = d.loss(&target, &hist, &cond, &mut r2).unwrap().to_scalar::<f32>().unwrap();
        assert!(l1.is_finite());
        assert_eq!(l1, l2);
    }

    #[test]
    fn denoise_rejects_bad_shapes() {
        let d = build(4);
        let (hist, feats, acts) = inputs(1);
        let cond = d.conditioning(&feats, &acts, false, None).unwrap();
        let bad = randn(&[1, 3, 16, 16], 1);
        assert!(d.denoise(&bad, &[1.0], &hist, &cond).is_err());
        let x = randn(&[1, 3, 32, 32], 1);
        assert!(d.denoise(&x, &[1.0, 1.0], &hist, &cond).is_err());
    }

    #[test]
    fn config_rejects_bad_window_and_widths() {
        assert!(DenoiserConfig { window: 3, ..small_cfg() }.validate().is_err());
        assert!(DenoiserConfig { widths: [8, 9, 16], ..small_cfg() }.validate().is_err());
        assert!(small_cfg().validate().is_ok());
    }
}
