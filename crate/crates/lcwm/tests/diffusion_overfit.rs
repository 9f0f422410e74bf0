//! End-to-end check that the diffusion head can actually be learned and
//! sampled: overfit the denoiser on a single rendered frame, verify the
//! denoising error is small across the whole sigma range, and verify the
//! Heun sampler reproduces the frame. Also documents why a finer sampling
//! ladder helps a small denoiser: the Heun corrector divides by sigma_next,
//! so coarse ladders amplify denoiser error.

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lcwm::diffusion::{Denoiser, DenoiserConfig};
use lcwm::gridworld::{build_episode, MazeSpec, DEFAULT_PALETTE};
use lcwm::optim::{Adam, AdamConfig};

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], device: &Device) -> Tensor {
    let n: usize = shape.iter().product();
    let vals: Vec<f32> = (0..n)
        .map(|_| {
            let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::from_vec(vals, shape, device).unwrap()
}

#[test]
fn overfit_one_frame_and_sample_it_back() {
    let device = Device::Cpu;
    let spec = MazeSpec {
        size: 21,
        marker_count: 40,
        difficulty: 3,
        palette: DEFAULT_PALETTE.to_vec(),
        seed: 0,
    };
    let ep = build_episode(&spec, 0).unwrap();
    let img = ep.observations[10].to_f32(); // [0,1], HWC
    let hw = 32usize;
    let mut chw = vec![0f32; img.len()];
    for r in 0..hw {
        for c in 0..hw {
            for ch in 0..3 {
                chw[ch * hw * hw + r * hw + c] = img[(r * hw + c) * 3 + ch] * 2.0 - 1.0;
            }
        }
    }
    let target = Tensor::from_vec(chw, (1, 3, hw, hw), &device).unwrap();
    let history = Tensor::cat(&[&target, &target, &target, &target], 1).unwrap();

    let cfg = DenoiserConfig {
        image_size: 32,
        feature_dim: 64,
        fusion_hidden: 64,
        widths: [16, 24, 32],
        emb_dim: 64,
        action_noise_std: 0.0,
        ..Default::default()
    };
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let den = Denoiser::new(cfg, vb.pp("d")).unwrap();
    lcwm::init::deterministic_init(&varmap, 0).unwrap();

    let feats = Tensor::zeros((1, 4, 64), DType::F32, &device).unwrap();
    let actions = Tensor::from_vec(vec![0u32, 1, 2, 3], (1, 4), &device).unwrap();
    let cond = den.conditioning(&feats, &actions, false, None).unwrap();

    let mut opt =
        Adam::new(varmap.all_vars(), AdamConfig { lr: 1e-3, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3000 {
        let loss = den.loss(&target, &history, &cond, &mut rng).unwrap();
        let grads = loss.backward().unwrap();
        opt.step(&grads).unwrap();
    }

    // Denoising error must be small across the entire sigma range.
    let mut nrng = ChaCha8Rng::seed_from_u64(3);
    for &s in &[0.002f64, 0.02, 0.1, 0.5, 2.0, 10.0, 80.0] {
        let noise = randn(&mut nrng, &[1, 3, hw, hw], &device);
        let noisy = (&target + (noise * s).unwrap()).unwrap();
        let d = den.denoise(&noisy, &[s], &history, &cond).unwrap();
        let rmse = (d - &target)
            .unwrap()
            .sqr()
            .unwrap()
            .mean_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap()
            .sqrt();
        assert!(rmse < 0.25, "denoise rmse {rmse:.4} at sigma {s}");
    }

    // The sampler must reproduce the frame, and a finer ladder must not be
    // worse than the coarse default.
    let psnr_of = |steps: usize| {
        let sample = den.sample(&history, &cond, steps, 0).unwrap();
        let mse = (sample - &target)
            .unwrap()
            .sqr()
            .unwrap()
            .mean_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap() as f64;
        10.0 * (4.0 / mse).log10() // PSNR in the [0,1] domain
    };
    let coarse = psnr_of(5);
    let fine = psnr_of(12);
    assert!(fine > 22.0, "12-step sample PSNR too low: {fine:.2} dB (5-step: {coarse:.2})");
    assert!(fine + 1.0 >= coarse, "finer ladder much worse: {fine:.2} vs {coarse:.2} dB");
}
