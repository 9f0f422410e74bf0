//! Convolutional frame autoencoder: the deterministic per-frame tokenizer
//! producing the compact features `f_t` consumed by the long-context branch.
//!
//! Three stride-2 conv stages take a 32x32 RGB observation to a 4x4 map with
//! `feature_dim / 16` channels, flattened into the feature vector; a mirrored
//! transposed-conv decoder maps features back to images. Trained first with
//! an MSE objective, then frozen for every later stage.

use candle_core::{DType, Device, Tensor};
use candle_nn::ops::silu;
use candle_nn::{
    conv2d, conv_transpose2d, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig,
    Module, VarBuilder, VarMap,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Observation, OBS_SIZE};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Feature vector width D; must be a multiple of 16 (one 4x4 latent map
    /// per 16 features).
    pub feature_dim: usize,
    pub image_size: usize,
    /// Channel widths of the two outer conv stages.
    pub widths: [usize; 2],
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { feature_dim: 64, image_size: OBS_SIZE, widths: [32, 64] }
    }
}

impl TokenizerConfig {
    pub fn latent_channels(&self) -> usize {
        self.feature_dim / 16
    }

    pub fn latent_side(&self) -> usize {
        self.image_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.feature_dim % 16 != 0 {
            return Err(Error::Config(format!(
                "feature_dim must be a positive multiple of 16, got {}",
                self.feature_dim
            )));
        }
        if self.image_size % 8 != 0 || self.latent_side() != 4 {
            return Err(Error::Config(format!(
                "image_size must be 32 (8x spatial stride to a 4x4 map), got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

pub struct Tokenizer {
    enc: [Conv2d; 3],
    dec: [ConvTranspose2d; 3],
    pub cfg: TokenizerConfig,
}

impl Tokenizer {
    pub fn new(cfg: TokenizerConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let [w0, w1] = cfg.widths;
        let lc = cfg.latent_channels();
        let c = Conv2dConfig { padding: 1, stride: 2, ..Default::default() };
        let t = ConvTranspose2dConfig { padding: 1, stride: 2, ..Default::default() };
        let enc = [
            conv2d(3, w0, 3, c, vb.pp("enc0"))?,
            conv2d(w0, w1, 3, c, vb.pp("enc1"))?,
            conv2d(w1, lc, 3, c, vb.pp("enc2"))?,
        ];
        let dec = [
            conv_transpose2d(lc, w1, 4, t, vb.pp("dec0"))?,
            conv_transpose2d(w1, w0, 4, t, vb.pp("dec1"))?,
            conv_transpose2d(w0, 3, 4, t, vb.pp("dec2"))?,
        ];
        Ok(Self { enc, dec, cfg })
    }

    /// (B, 3, H, W) in [0,1] -> (B, D). Deterministic given the parameters.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = images.dims4()?;
        if c != 3 || h != self.cfg.image_size || w != self.cfg.image_size {
            return Err(Error::Shape(format!(
                "encode expects (B,3,{0},{0}), got ({b},{c},{h},{w})",
                self.cfg.image_size
            )));
        }
        let mut x = images.clone();
        for (i, conv) in self.enc.iter().enumerate() {
            x = conv.forward(&x)?;
            if i + 1 < self.enc.len() {
                x = silu(&x)?;
            }
        }
        Ok(x.reshape((b, self.cfg.feature_dim))?)
    }

    /// (B, D) -> (B, 3, H, W), unclamped. Training targets this output.
    pub fn decode_raw(&self, features: &Tensor) -> Result<Tensor> {
        let (b, d) = features.dims2()?;
        if d != self.cfg.feature_dim {
            return Err(Error::Shape(format!(
                "decode expects dimension {}, got {d}",
                self.cfg.feature_dim
            )));
        }
        let side = self.cfg.latent_side();
        let mut x = features.reshape((b, self.cfg.latent_channels(), side, side))?;
        for (i, conv) in self.dec.iter().enumerate() {
            x = conv.forward(&x)?;
            if i + 1 < self.dec.len() {
                x = silu(&x)?;
            }
        }
        Ok(x)
    }

    /// (B, D) -> (B, 3, H, W) clamped to [0,1].
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.decode_raw(features)?.clamp(0.0, 1.0)?)
    }

    /// Encodes a batch of observations into a (B, D) feature tensor.
    pub fn encode_observations(&self, obs: &[&Observation], device: &Device) -> Result<Tensor> {
        let images = observations_to_tensor(obs, self.cfg.image_size, device)?;
        self.encode(&images)
    }
}

/// Packs observations into a (B, 3, H, W) [0,1] float tensor.
pub fn observations_to_tensor(
    obs: &[&Observation],
    image_size: usize,
    device: &Device,
) -> Result<Tensor> {
    let hw = image_size * image_size;
    let mut data = vec![0f32; obs.len() * 3 * hw];
    for (b, o) in obs.iter().enumerate() {
        if o.pixels.len() != hw * 3 {
            return Err(Error::Shape(format!(
                "observation has {} bytes, expected {}",
                o.pixels.len(),
                hw * 3
            )));
        }
        for (i, &px) in o.pixels.iter().enumerate() {
            let (pix, ch) = (i / 3, i % 3);
            data[b * 3 * hw + ch * hw + pix] = px as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(data, (obs.len(), 3, image_size, image_size), device)?)
}

/// (B, 3, H, W) tensor in [0,1] back to byte observations.
pub fn tensor_to_observations(images: &Tensor) -> Result<Vec<Observation>> {
    let (b, c, h, w) = images.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let flat = images.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let hw = h * w;
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut interleaved = vec![0f32; hw * 3];
        for ch in 0..3 {
            for pix in 0..hw {
                interleaved[pix * 3 + ch] = flat[bi * 3 * hw + ch * hw + pix];
            }
        }
        out.push(Observation::from_f32(&interleaved));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TokenizerTrainOpts {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub holdout_frac: f64,
    pub log_every: usize,
}

impl Default for TokenizerTrainOpts {
    fn default() -> Self {
        Self { iterations: 3000, batch_size: 32, lr: 1e-3, seed: 0, holdout_frac: 0.1, log_every: 200 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainCurve {
    /// (iteration, loss) samples of the running training loss.
    pub train: Vec<(usize, f64)>,
    /// (iteration, loss) on the held-out split.
    pub holdout: Vec<(usize, f64)>,
}

/// Trains the autoencoder with MSE on a frame corpus. Aborts on NaN loss.
/// Returns the model, its variables (for checkpointing) and the loss curves.
pub fn train_tokenizer(
    frames: &[&Observation],
    cfg: TokenizerConfig,
    opts: &TokenizerTrainOpts,
    device: &Device,
) -> Result<(Tokenizer, VarMap, TrainCurve)> {
    if frames.is_empty() {
        return Err(Error::Invalid("tokenizer training needs at least one frame".into()));
    }
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let model = Tokenizer::new(cfg, vb)?;
    crate::init::deterministic_init(&varmap, opts.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut rng);
    let holdout_len = ((frames.len() as f64 * opts.holdout_frac) as usize).min(frames.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_len);
    let train_idx = train_idx.to_vec();
    let holdout: Vec<&Observation> = holdout_idx.iter().map(|&i| frames[i]).collect();

    let mut opt = Adam::new(
        varmap.all_vars(),
        AdamConfig { lr: opts.lr, weight_decay: 0.0, grad_clip: Some(10.0), ..Default::default() },
    )?;
    let mut curve = TrainCurve::default();
    let holdout_tensor = if holdout.is_empty() {
        None
    } else {
        Some(observations_to_tensor(&holdout, model.cfg.image_size, device)?)
    };
    for it in 0..opts.iterations {
        let batch: Vec<&Observation> = (0..opts.batch_size)
            .map(|_| frames[train_idx[rng.gen_range(0..train_idx.len())]])
            .collect();
        let images = observations_to_tensor(&batch, model.cfg.image_size, device)?;
        let recon = model.decode_raw(&model.encode(&images)?)?;
        let loss = (recon - &images)?.sqr()?.mean_all()?;
        let loss_v = loss.to_scalar::<f32>()? as f64;
        if !loss_v.is_finite() {
            return Err(Error::Numeric(format!("tokenizer loss diverged at iteration {it}")));
        }
        let grads = loss.backward()?;
        opt.step(&grads)?;
        if it % opts.log_every == 0 || it + 1 == opts.iterations {
            curve.train.push((it, loss_v));
            if let Some(h) = &holdout_tensor {
                let recon = model.decode_raw(&model.encode(h)?)?;
                let hl = (recon - h)?.sqr()?.mean_all()?.to_scalar::<f32>()? as f64;
                curve.holdout.push((it, hl));
            }
        }
    }
    Ok((model, varmap, curve))
}
