//! Temporary diagnostic: can the UNet learn next-frame regression directly
//! (no diffusion), given the 4-frame history and action conditioning?

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lcwm::diffusion::{Unet, UnetConfig};
use lcwm::gridworld::{build_episode, slice_context, MazeSpec, DEFAULT_PALETTE};
use lcwm::optim::{Adam, AdamConfig};
use lcwm::tokenizer::observations_to_tensor;

#[test]
fn supervised_next_frame() {
    let device = Device::Cpu;
    let spec = MazeSpec {
        size: 21,
        marker_count: 40,
        difficulty: 3,
        palette: DEFAULT_PALETTE.to_vec(),
        seed: 0,
    };
    // 240 training episodes, 12 held-out, 16-action mirrored windows.
    let mut images = Vec::new(); // (17,3,32,32) in [-1,1]
    let mut acts = Vec::new();
    for s in 0..252u64 {
        let seed = if s < 240 { s } else { 100_000 + s };
        let ep = build_episode(&spec, seed).unwrap();
        let ep = slice_context(&ep, 16).unwrap();
        let obs: Vec<_> = ep.observations.iter().collect();
        let img = observations_to_tensor(&obs, 32, &device).unwrap();
        images.push(((img * 2.0).unwrap() - 1.0).unwrap());
        acts.push(ep.actions.iter().map(|a| a.index() as u32).collect::<Vec<u32>>());
    }
    let (train_n, total) = (240usize, images.len());

    let cfg = UnetConfig { in_channels: 12, widths: [16, 24, 32], emb_dim: 64, cond_dim: 16 };
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let unet = Unet::new(cfg, vb.pp("u")).unwrap();
    lcwm::init::deterministic_init(&varmap, 0).unwrap();

    // Action conditioning: one-hot of the 4 window actions (4 actions x 4 codes).
    let cond_of = |a: &[u32]| -> Vec<f32> {
        let mut v = vec![0f32; 16];
        for (j, &c) in a.iter().enumerate() {
            v[j * 4 + c as usize] = 1.0;
        }
        v
    };

    let mut opt =
        Adam::new(varmap.all_vars(), AdamConfig { lr: 1e-3, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bsz = 16usize;
    let k = 4usize;
    let eval_rmse = |unet: &Unet, range: std::ops::Range<usize>| -> f32 {
        let mut acc = 0f32;
        let mut cnt = 0usize;
        for i in range {
            for t in [9usize, 12, 16] {
                let hist = images[i].narrow(0, t - k, k).unwrap().reshape((1, 12, 32, 32)).unwrap();
                let target = images[i].narrow(0, t, 1).unwrap();
                let cond =
                    Tensor::from_vec(cond_of(&acts[i][t - k..t]), (1, 16), &device).unwrap();
                let cn = Tensor::zeros(1, DType::F32, &device).unwrap();
                let out = unet.forward(&hist, &cn, &cond).unwrap();
                let mse = (out - &target)
                    .unwrap()
                    .sqr()
                    .unwrap()
                    .mean_all()
                    .unwrap()
                    .to_scalar::<f32>()
                    .unwrap();
                acc += mse;
                cnt += 1;
            }
        }
        (acc / cnt as f32).sqrt()
    };

    for it in 0..4000 {
        let t = rng.gen_range(k..=16);
        let idx: Vec<usize> = (0..bsz).map(|_| rng.gen_range(0..train_n)).collect();
        let hist = Tensor::stack(
            &idx.iter().map(|&i| images[i].narrow(0, t - k, k).unwrap()).collect::<Vec<_>>(),
            0,
        )
        .unwrap()
        .reshape((bsz, 12, 32, 32))
        .unwrap();
        let target = Tensor::stack(
            &idx.iter().map(|&i| images[i].narrow(0, t, 1).unwrap()).collect::<Vec<_>>(),
            0,
        )
        .unwrap()
        .reshape((bsz, 3, 32, 32))
        .unwrap();
        let cond = Tensor::from_vec(
            idx.iter().flat_map(|&i| cond_of(&acts[i][t - k..t])).collect::<Vec<f32>>(),
            (bsz, 16),
            &device,
        )
        .unwrap();
        let cn = Tensor::zeros(bsz, DType::F32, &device).unwrap();
        let out = unet.forward(&hist, &cn, &cond).unwrap();
        let loss = (out - &target).unwrap().sqr().unwrap().mean_all().unwrap();
        let grads = loss.backward().unwrap();
        opt.step(&grads).unwrap();
        if it % 500 == 0 || it == 3999 {
            eprintln!(
                "iter {it}: loss {:.4}, train rmse {:.3}, heldout rmse {:.3}",
                loss.to_scalar::<f32>().unwrap(),
                eval_rmse(&unet, 0..8),
                eval_rmse(&unet, train_n..total)
            );
        }
    }
}
