//! Small conditional UNet backbone for the denoiser. Noise level and fused
//! conditioning enter through a shared embedding that scales and shifts the
//! normalized activations inside every residual block. The output conv is
//! zero-initialized, so a fresh network computes the zero function.

use candle_core::Tensor;
use candle_nn::ops::silu;
use candle_nn::{
    conv2d, conv_transpose2d, group_norm, linear, Conv2d, Conv2dConfig, ConvTranspose2d,
    ConvTranspose2dConfig, GroupNorm, Linear, Module, VarBuilder,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub in_channels: usize,
    /// Channel widths at 32x32, 16x16 and 8x8; each divisible by 8.
    pub widths: [usize; 3],
    /// Conditioning embedding width.
    pub emb_dim: usize,
    /// Width of the external conditioning vector.
    pub cond_dim: usize,
}

struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    emb_lin: Linear,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(c_in: usize, c_out: usize, emb_dim: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Conv2dConfig { padding: 1, ..Default::default() };
        Ok(Self {
            gn1: group_norm(8.min(c_in), c_in, 1e-5, vb.pp("gn1"))?,
            conv1: conv2d(c_in, c_out, 3, cfg, vb.pp("conv1"))?,
            emb_lin: linear(emb_dim, 2 * c_out, vb.pp("emb"))?,
            gn2: group_norm(8.min(c_out), c_out, 1e-5, vb.pp("gn2"))?,
            conv2: conv2d(c_out, c_out, 3, cfg, vb.pp("conv2"))?,
            skip: if c_in == c_out {
                None
            } else {
                Some(conv2d(c_in, c_out, 1, Default::default(), vb.pp("skip"))?)
            },
        })
    }

    fn forward(&self, x: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&silu(&self.gn1.forward(x)?)?)?;
        // Scale-and-shift modulation: the multiplicative part lets the
        // conditioning gate channels (e.g. select which history frame to
        // pass through), which a purely additive bias cannot express.
        let e = self.emb_lin.forward(&silu(emb)?)?;
        let c = h.dims4()?.1;
        let scale = e.narrow(1, 0, c)?.unsqueeze(2)?.unsqueeze(3)?;
        let shift = e.narrow(1, c, c)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = self
            .gn2
            .forward(&h)?
            .broadcast_mul(&(scale + 1.0)?)?
            .broadcast_add(&shift)?;
        let h = self.conv2.forward(&silu(&h)?)?;
        let x = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((x + h)?)
    }
}

pub struct Unet {
    stem: Conv2d,
    enc0: ResBlock,
    down0: Conv2d,
    enc1: ResBlock,
    down1: Conv2d,
    enc2: ResBlock,
    mid: ResBlock,
    up1: ConvTranspose2d,
    dec1: ResBlock,
    up0: ConvTranspose2d,
    dec0: ResBlock,
    out_gn: GroupNorm,
    out_zero: Conv2d,
    noise_lin: Linear,
    cond_lin: Linear,
    pub cfg: UnetConfig,
}

/// Frequencies of the Fourier embedding of c_noise.
const NOISE_FREQS: [f32; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];

impl Unet {
    pub fn new(cfg: UnetConfig, vb: VarBuilder) -> Result<Self> {
        let [c0, c1, c2] = cfg.widths;
        let e = cfg.emb_dim;
        let conv3 = Conv2dConfig { padding: 1, ..Default::default() };
        let down = Conv2dConfig { padding: 1, stride: 2, ..Default::default() };
        let up = ConvTranspose2dConfig { padding: 1, stride: 2, ..Default::default() };
        Ok(Self {
            stem: conv2d(cfg.in_channels, c0, 3, conv3, vb.pp("stem"))?,
            enc0: ResBlock::new(c0, c0, e, vb.pp("enc0"))?,
            down0: conv2d(c0, c1, 3, down, vb.pp("down0"))?,
            enc1: ResBlock::new(c1, c1, e, vb.pp("enc1"))?,
            down1: conv2d(c1, c2, 3, down, vb.pp("down1"))?,
            enc2: ResBlock::new(c2, c2, e, vb.pp("enc2"))?,
            mid: ResBlock::new(c2, c2, e, vb.pp("mid"))?,
            up1: conv_transpose2d(c2, c1, 4, up, vb.pp("up1"))?,
            dec1: ResBlock::new(2 * c1, c1, e, vb.pp("dec1"))?,
            up0: conv_transpose2d(c1, c0, 4, up, vb.pp("up0"))?,
            dec0: ResBlock::new(2 * c0, c0, e, vb.pp("dec0"))?,
            out_gn: group_norm(8.min(c0), c0, 1e-5, vb.pp("out_gn"))?,
            out_zero: conv2d(c0, 3, 3, conv3, vb.pp("out_zero"))?,
            noise_lin: linear(2 * NOISE_FREQS.len(), e, vb.pp("noise_lin"))?,
            cond_lin: linear(cfg.cond_dim, e, vb.pp("cond_lin"))?,
            cfg,
        })
    }

    fn noise_embedding(&self, c_noise: &Tensor) -> Result<Tensor> {
        // c_noise: (B,) -> (B, 2 * |freqs|)
        let freqs = Tensor::from_slice(&NOISE_FREQS, NOISE_FREQS.len(), c_noise.device())?
            .to_dtype(c_noise.dtype())?;
        let arg = c_noise.unsqueeze(1)?.broadcast_mul(&freqs.unsqueeze(0)?)?;
        let emb = Tensor::cat(&[arg.sin()?, arg.cos()?], 1)?;
        Ok(self.noise_lin.forward(&emb)?)
    }

    /// `x`: (B, in_channels, H, W); `c_noise`: (B,); `cond`: (B, cond_dim).
    pub fn forward(&self, x: &Tensor, c_noise: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let emb = (self.noise_embedding(c_noise)? + self.cond_lin.forward(cond)?)?;
        let s = self.stem.forward(x)?;
        let e0 = self.enc0.forward(&s, &emb)?;
        let e1 = self.enc1.forward(&self.down0.forward(&e0)?, &emb)?;
        let e2 = self.enc2.forward(&self.down1.forward(&e1)?, &emb)?;
        let m = self.mid.forward(&e2, &emb)?;
        let d1 = self.dec1.forward(&Tensor::cat(&[self.up1.forward(&m)?, e1], 1)?, &emb)?;
        let d0 = self.dec0.forward(&Tensor::cat(&[self.up0.forward(&d1)?, e0], 1)?, &emb)?;
        Ok(self.out_zero.forward(&silu(&self.out_gn.forward(&d0)?)?)?)
    }
}
