//! Shows the two faces of the selective state-space block: the O(T) batched
//! scan used in training and the constant-memory streaming step used at
//! evaluation time. Both produce the same outputs, and the streaming state
//! stays the same size no matter how many steps it has consumed.
//!
//!     cargo run --release --example streaming_state

use candle_core::{DType, Device, IndexOp, Tensor};
use candle_nn::{VarBuilder, VarMap};
use lcwm::ssm::{MambaBlock, SsmConfig, SsmState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lcwm::Result<()> {
    let device = Device::Cpu;
    let cfg = SsmConfig { model_dim: 32, state_dim: 16, expand: 2, conv_width: 4 };
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let block = MambaBlock::new(cfg.clone(), vb.pp("block"))?;
    lcwm::init::deterministic_init(&varmap, 0)?;

    // Random input sequence.
    let t = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vals: Vec<f32> = (0..t * cfg.model_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xs = Tensor::from_vec(vals, (1, t, cfg.model_dim), &device)?;

    // Batched scan over the whole sequence at once.
    let scanned = block.forward_seq(&xs)?;

    // The same sequence fed one step at a time through the streaming state.
    let mut state = SsmState::zeros(&cfg, &device, DType::F32)?;
    let mut max_dev = 0f32;
    for step in 0..t {
        let x = xs.i((0, step))?.contiguous()?;
        let y = block.step(&mut state, &x)?;
        let want = scanned.i((0, step))?;
        let dev = (y - want)?.abs()?.max_all()?.to_scalar::<f32>()?;
        max_dev = max_dev.max(dev);
    }
    println!("scan vs streaming: max deviation over {t} steps = {max_dev:.2e}");
    assert!(max_dev <= 1e-5);

    // The serialized state is the model's entire memory, and it does not grow.
    let size_now = state.to_bytes()?.len();
    for step in 0..1000 {
        let x = xs.i((0, step % t))?.contiguous()?;
        block.step(&mut state, &x)?;
    }
    let size_later = state.to_bytes()?.len();
    println!("state size after 24 steps: {size_now} bytes; after 1024 steps: {size_later} bytes");
    assert_eq!(size_now, size_later);
    Ok(())
}
