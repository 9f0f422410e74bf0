//! End-to-end acceptance suite. Each numbered criterion prints one PASS/FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`); the
//! test fails if any criterion fails.
//!
//! Trained fixtures are cached under `target/fixtures`, keyed by a hash of
//! their full configuration, so only the first run pays the training cost.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, IndexOp, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use lcwm::diffusion::{Denoiser, DenoiserConfig};
use lcwm::evalkit::{
    eval_next_frame, noise_robustness, seed_stability, NoiseConfig,
};
use lcwm::gridworld::{
    build_episode, build_simple_dataset, generate_maze, step, write_dataset, Cell, Episode,
    MazeSpec, DEFAULT_PALETTE,
};
use lcwm::ssm::{MambaBlock, SsmConfig, SsmState};
use lcwm::trainer::{
    load_world_model, train_stage_diffuser, train_stage_lcb, train_stage_tokenizer, RunConfig,
};
use lcwm::world::{ContextBatch, ModelKind, WorldModel};

// ---------------------------------------------------------------------------
// Fixture management
// ---------------------------------------------------------------------------

fn fixtures_root() -> PathBuf {
    let target = std::env::var("CARGO_TARGET_DIR").unwrap_or_else(|_| "target".into());
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(target).join("fixtures")
}

fn desk_run_config(dataset: PathBuf, seq_len: usize) -> RunConfig {
    let mut cfg = RunConfig {
        dataset,
        seq_len,
        batch_size: 16,
        seed: 0,
        eval_every: 200,
        ..Default::default()
    };
    cfg.lcb.ssm.state_dim = 64;
    cfg.lcb.ssm.expand = 2;
    cfg.denoiser.widths = [16, 24, 32];
    cfg.denoiser.emb_dim = 64;
    cfg.denoiser.fusion_hidden = 64;
    // A finer sampling ladder compensates for the modest denoiser capacity
    // used in tests; the Heun corrector amplifies denoiser error by the
    // sigma ratio between adjacent rungs.
    cfg.denoiser.schedule.steps = 12;
    cfg
}

struct StagePlan {
    tokenizer: (usize, f64),
    lcb: (usize, f64),
    diffuser: (usize, f64),
}

/// Trains all four checkpoints (tokenizer, long-context, diffuser with and
/// without memory) unless a cached fixture with the same config hash exists.
fn ensure_fixture(
    name: &str,
    episodes: &[Episode],
    seq_len: usize,
    plan: &StagePlan,
) -> PathBuf {
    let key = format!(
        "{name}|{}|{seq_len}|{:?}|{:?}|{:?}|v3",
        episodes.len(),
        plan.tokenizer,
        plan.lcb,
        plan.diffuser
    );
    let hash = format!("{:x}", Sha256::digest(key.as_bytes()));
    let root = fixtures_root().join(format!("{name}-{}", &hash[..12]));
    let marker = root.join("fixture.done");
    if marker.exists() {
        return root;
    }
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let data = root.join("data");
    write_dataset(&data, episodes).unwrap();

    let mut cfg = desk_run_config(data, seq_len);
    let t0 = Instant::now();
    (cfg.iterations, cfg.lr) = plan.tokenizer;
    train_stage_tokenizer(&cfg, &root).unwrap();
    eprintln!("[fixture {name}] tokenizer trained in {:.0?}", t0.elapsed());

    let t0 = Instant::now();
    (cfg.iterations, cfg.lr) = plan.lcb;
    train_stage_lcb(&cfg, &root).unwrap();
    eprintln!("[fixture {name}] long-context branch trained in {:.0?}", t0.elapsed());

    let t0 = Instant::now();
    (cfg.iterations, cfg.lr) = plan.diffuser;
    train_stage_diffuser(&cfg, &root).unwrap();
    cfg.ablate_state = true;
    train_stage_diffuser(&cfg, &root).unwrap();
    eprintln!("[fixture {name}] both diffusers trained in {:.0?}", t0.elapsed());

    std::fs::write(&marker, &hash).unwrap();
    root
}

fn simple_fixture() -> PathBuf {
    ensure_fixture(
        "simple",
        &build_simple_dataset(),
        6,
        &StagePlan { tokenizer: (1200, 1e-3), lcb: (2000, 3e-4), diffuser: (4000, 3e-4) },
    )
}

fn maze_spec() -> MazeSpec {
    MazeSpec {
        size: 21,
        marker_count: 40,
        difficulty: 3,
        palette: DEFAULT_PALETTE.to_vec(),
        seed: 0,
    }
}

fn maze_fixture() -> PathBuf {
    let spec = maze_spec();
    let episodes: Vec<Episode> =
        (0..240).map(|s| build_episode(&spec, s).unwrap()).collect();
    ensure_fixture(
        "maze",
        &episodes,
        16,
        &StagePlan { tokenizer: (900, 1e-3), lcb: (2000, 3e-4), diffuser: (6000, 3e-4) },
    )
}

fn eval_episodes(count: usize) -> Vec<Episode> {
    let spec = maze_spec();
    (0..count as u64).map(|i| build_episode(&spec, 10_000 + i).unwrap()).collect()
}

// ---------------------------------------------------------------------------
// Criterion helpers
// ---------------------------------------------------------------------------

/// Marker cell in the agent's 7x7 window at the final pose of a Simple
/// episode, plus its palette color index.
fn marker_window_cell(ep: &Episode) -> (usize, usize, usize) {
    let pose = ep.poses.last().unwrap();
    let size = ep.meta.spec.size as i64;
    for r in 0..size {
        for c in 0..size {
            if let Cell::Marker(color) = ep.grid.at(r, c) {
                let wr = 3 + r - pose.row as i64;
                let wc = 3 + c - pose.col as i64;
                return (wr as usize, wc as usize, color as usize);
            }
        }
    }
    panic!("simple episode has no marker");
}

/// Predicts each episode's final frame and classifies the marker region
/// against the palette plus floor/wall distractor colors.
fn recall_correct(model: &WorldModel, episodes: &[Episode]) -> usize {
    let mut candidates: Vec<[u8; 3]> = DEFAULT_PALETTE.to_vec();
    candidates.push([0, 0, 0]); // floor
    candidates.push([60, 60, 60]); // wall
    let mut correct = 0;
    for ep in episodes {
        let t = ep.observations.len() - 1;
        let obs: Vec<_> = ep.observations[..t].iter().collect();
        let ctx = ContextBatch::new(
            &[(obs, ep.actions[..t].to_vec())],
            model.tokenizer.cfg.image_size,
            &model.device,
        )
        .unwrap();
        let pred = model.predict_next_frames(&ctx, 0).unwrap();
        let pred = lcwm::tokenizer::tensor_to_observations(&pred).unwrap().remove(0);
        let (wr, wc, color) = marker_window_cell(ep);
        if pred.nearest_palette_color(wr, wc, &candidates) == color {
            correct += 1;
        }
    }
    correct
}

/// Independent brute-force PSNR (direct formula, f64 accumulation).
fn psnr_reference(a: &[f32], b: &[f32]) -> f64 {
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Independent brute-force SSIM with the same Gaussian-weighted 11x11 window
/// definition as the library, accumulated per-window from first principles.
fn ssim_reference(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let half = 5i64;
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let lum = |img: &[f32], r: usize, c: usize| {
        let base = (r * w + c) * 3;
        (img[base] as f64 + img[base + 1] as f64 + img[base + 2] as f64) / 3.0
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            let (mut wsum, mut ma, mut mb) = (0.0, 0.0, 0.0);
            let mut weights = Vec::new();
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let wgt = (-((dr * dr + dc * dc) as f64) / 4.5).exp();
                    weights.push((rr as usize, cc as usize, wgt));
                    wsum += wgt;
                    ma += wgt * lum(a, rr as usize, cc as usize);
                    mb += wgt * lum(b, rr as usize, cc as usize);
                }
            }
            ma /= wsum;
            mb /= wsum;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for &(rr, cc, wgt) in &weights {
                let da = lum(a, rr, cc) - ma;
                let db = lum(b, rr, cc) - mb;
                va += wgt * da * da;
                vb += wgt * db * db;
                cov += wgt * da * db;
            }
            va /= wsum;
            vb /= wsum;
            cov /= wsum;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn randomize_vars(varmap: &VarMap, seed: u64) {
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    for (i, name) in names.iter().enumerate() {
        let var = &data[*name];
        let n = var.shape().elem_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let t = Tensor::from_vec(vals, var.shape().dims(), var.device())
            .unwrap()
            .to_dtype(var.dtype())
            .unwrap();
        var.set(&t).unwrap();
    }
}

fn randn_f64(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::from_vec(vals, shape, &Device::Cpu).unwrap()
}

/// Max relative mismatch between analytic and central-difference gradients
/// over a spread of each variable's elements.
fn max_gradcheck_error(varmap: &VarMap, loss_fn: &dyn Fn() -> f64, grad_of: &dyn Fn(&Var) -> Vec<f64>) -> f64 {
    let eps = 1e-5;
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut worst = 0.0f64;
    for name in names {
        let var = &data[name];
        let analytic = grad_of(var);
        let n = analytic.len();
        let picks: BTreeSet<usize> = [0, n / 2, n - 1].into_iter().collect();
        for idx in picks {
            let base: Vec<f64> =
                var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let mut bumped = base.clone();
            bumped[idx] += eps;
            var.set(&Tensor::from_vec(bumped, var.shape().dims(), var.device()).unwrap()).unwrap();
            let lp = loss_fn();
            let mut bumped = base.clone();
            bumped[idx] -= eps;
            var.set(&Tensor::from_vec(bumped, var.shape().dims(), var.device()).unwrap()).unwrap();
            let lm = loss_fn();
            var.set(&Tensor::from_vec(base, var.shape().dims(), var.device()).unwrap()).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let ana = analytic[idx];
            let denom = numeric.abs().max(ana.abs()).max(1e-4);
            worst = worst.max((numeric - ana).abs() / denom);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// The suite
// ---------------------------------------------------------------------------

struct Outcomes {
    lines: Vec<(usize, bool, String)>,
}

impl Outcomes {
    fn record(&mut self, n: usize, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict}: {detail}");
        self.lines.push((n, ok, detail));
    }
}

#[test]
fn acceptance() {
    let mut out = Outcomes { lines: Vec::new() };

    // --- cheap, self-contained criteria first -----------------------------

    // 4: scan/step equivalence over random configurations.
    {
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst = 0.0f32;
        for draw in 0..100 {
            let cfg = SsmConfig {
                model_dim: *[4usize, 6, 8, 12].get(rng.gen_range(0..4)).unwrap(),
                state_dim: *[2usize, 4, 8, 16].get(rng.gen_range(0..4)).unwrap(),
                expand: rng.gen_range(1..=2),
                conv_width: rng.gen_range(2..=4),
            };
            let t = rng.gen_range(1..=64);
            let varmap = VarMap::new();
            let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
            let block = MambaBlock::new(cfg.clone(), vb.pp("m")).unwrap();
            lcwm::init::deterministic_init(&varmap, draw).unwrap();
            let vals: Vec<f32> =
                (0..t * cfg.model_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xs = Tensor::from_vec(vals, (1, t, cfg.model_dim), &device).unwrap();
            let scan = block.forward_seq(&xs).unwrap();
            let scale = scan
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap()
                .max(1e-3);
            let mut state = SsmState::zeros(&cfg, &device, DType::F32).unwrap();
            for s in 0..t {
                let x = xs.i((0, s)).unwrap().contiguous().unwrap();
                let y = block.step(&mut state, &x).unwrap();
                let dev = (y - scan.i((0, s)).unwrap())
                    .unwrap()
                    .abs()
                    .unwrap()
                    .max_all()
                    .unwrap()
                    .to_scalar::<f32>()
                    .unwrap();
                worst = worst.max(dev / scale);
            }
        }
        out.record(
            4,
            worst <= 1e-5,
            format!("scan vs folded steps, 100 draws, max relative deviation {worst:.2e}"),
        );
    }

    // 5: constant-size, constant-latency streaming state.
    {
        let device = Device::Cpu;
        let cfg = SsmConfig { model_dim: 32, state_dim: 32, expand: 2, conv_width: 4 };
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let block = MambaBlock::new(cfg.clone(), vb.pp("m")).unwrap();
        lcwm::init::deterministic_init(&varmap, 5).unwrap();
        let x = Tensor::from_vec(
            (0..cfg.model_dim).map(|i| (i as f32 * 0.37).sin()).collect::<Vec<_>>(),
            cfg.model_dim,
            &device,
        )
        .unwrap();
        let mut state = SsmState::zeros(&cfg, &device, DType::F32).unwrap();
        // Warm-up, then size/latency at T=10.
        for _ in 0..200 {
            block.step(&mut state, &x).unwrap();
        }
        let mut state = SsmState::zeros(&cfg, &device, DType::F32).unwrap();
        let early_t = Instant::now();
        for _ in 0..100 {
            block.step(&mut state, &x).unwrap();
        }
        let early = early_t.elapsed().as_secs_f64() / 100.0;
        let size_10 = state.to_bytes().unwrap().len();
        for _ in 100..9_900 {
            block.step(&mut state, &x).unwrap();
        }
        let late_t = Instant::now();
        for _ in 0..100 {
            block.step(&mut state, &x).unwrap();
        }
        let late = late_t.elapsed().as_secs_f64() / 100.0;
        let size_10k = state.to_bytes().unwrap().len();
        let ratio = late / early;
        out.record(
            5,
            size_10 == size_10k && ratio < 2.0,
            format!(
                "state {size_10} bytes at T=10 vs {size_10k} at T=10000; per-step latency ratio {ratio:.2}"
            ),
        );
    }

    // 6: PSNR/SSIM against independent references.
    {
        let (h, w) = (16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let a: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            worst = worst
                .max((lcwm::evalkit::psnr(&a, &b).unwrap() - psnr_reference(&a, &b)).abs());
            worst = worst.max(
                (lcwm::evalkit::ssim(&a, &b, h, w).unwrap() - ssim_reference(&a, &b, h, w)).abs(),
            );
        }
        let z = vec![0f32; 12];
        let ones = vec![1f32; 12];
        let gray = [0.5f32, 0.0, 0.0, 0.0];
        let zero4 = [0f32; 4];
        let fixed_ok = lcwm::evalkit::psnr(&z, &ones).unwrap().abs() < 1e-12
            && (lcwm::evalkit::psnr(&zero4, &gray).unwrap() - 12.041199826559248).abs() < 1e-9
            && (lcwm::evalkit::ssim(&z, &z, 2, 2).unwrap() - 1.0).abs() < 1e-12;
        out.record(
            6,
            worst <= 1e-6 && fixed_ok,
            format!("20 random pairs vs brute-force references, max |delta| {worst:.2e}; fixed examples ok={fixed_ok}"),
        );
    }

    // 7: gradient checks on <=4-step toys.
    {
        let cfg = SsmConfig { model_dim: 6, state_dim: 4, expand: 2, conv_width: 3 };
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F64, &Device::Cpu);
        let block = MambaBlock::new(cfg, vb.pp("m")).unwrap();
        randomize_vars(&varmap, 70);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let xs = randn_f64(&mut rng, &[2, 4, 6]);
        let target = randn_f64(&mut rng, &[2, 4, 6]);
        let loss_t = || {
            let y = block.forward_seq(&xs).unwrap();
            (y - &target).unwrap().sqr().unwrap().mean_all().unwrap()
        };
        let grads = loss_t().backward().unwrap();
        let ssm_err = max_gradcheck_error(
            &varmap,
            &|| loss_t().to_scalar::<f64>().unwrap(),
            &|var| match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
                None => vec![0.0; var.shape().elem_count()],
            },
        );

        let dcfg = DenoiserConfig {
            image_size: 16,
            feature_dim: 16,
            action_dim: 8,
            fusion_hidden: 8,
            widths: [8, 8, 8],
            emb_dim: 8,
            action_noise_std: 0.0,
            ..Default::default()
        };
        let varmap2 = VarMap::new();
        let vb2 = VarBuilder::from_varmap(&varmap2, DType::F64, &Device::Cpu);
        let den = Denoiser::new(dcfg, vb2.pp("d")).unwrap();
        randomize_vars(&varmap2, 72);
        let target = randn_f64(&mut rng, &[1, 3, 16, 16]).clamp(-1.0, 1.0).unwrap();
        let history = randn_f64(&mut rng, &[1, 12, 16, 16]);
        let feats = randn_f64(&mut rng, &[1, 4, 16]);
        let actions = Tensor::from_vec(vec![0u32, 1, 2, 3], (1, 4), &Device::Cpu).unwrap();
        let loss_d = || {
            let cond = den.conditioning(&feats, &actions, false, None).unwrap();
            let mut lrng = ChaCha8Rng::seed_from_u64(99);
            den.loss(&target, &history, &cond, &mut lrng).unwrap()
        };
        let grads = loss_d().backward().unwrap();
        let den_err = max_gradcheck_error(
            &varmap2,
            &|| loss_d().to_scalar::<f64>().unwrap(),
            &|var| match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
                None => vec![0.0; var.shape().elem_count()],
            },
        );
        out.record(
            7,
            ssm_err <= 1e-3 && den_err <= 1e-3,
            format!("finite differences: selective-scan max rel err {ssm_err:.2e}, denoiser {den_err:.2e}"),
        );
    }

    // 8: mirror protocol invariants over 1000 generated episodes.
    {
        let mut failures = 0usize;
        for i in 0..1000u64 {
            let spec = MazeSpec {
                size: 15,
                marker_count: 12,
                difficulty: 1 + (i % 5) as u8,
                palette: DEFAULT_PALETTE.to_vec(),
                seed: i / 7,
            };
            let ep = build_episode(&spec, i).unwrap();
            let mid = ep.meta.midpoint;
            let mirrored = (0..=mid)
                .all(|k| ep.observations[mid + k] == ep.observations[mid - k]);
            let mut pose = ep.poses[0];
            let mut replay_ok = true;
            for (t, &a) in ep.actions.iter().enumerate() {
                pose = step(&ep.grid, &pose, a);
                replay_ok &= pose == ep.poses[t + 1];
            }
            let round_trip = replay_ok && pose == ep.poses[0];
            // Connectivity: BFS over non-wall cells.
            let grid = generate_maze(&spec).unwrap();
            let open: Vec<(i64, i64)> = (0..spec.size as i64)
                .flat_map(|r| (0..spec.size as i64).map(move |c| (r, c)))
                .filter(|&(r, c)| grid.at(r, c) != Cell::Wall)
                .collect();
            let mut seen: BTreeSet<(i64, i64)> = BTreeSet::new();
            let mut queue = vec![open[0]];
            seen.insert(open[0]);
            while let Some((r, c)) = queue.pop() {
                for (dr, dc) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let next = (r + dr, c + dc);
                    if grid.at(next.0, next.1) != Cell::Wall && seen.insert(next) {
                        queue.push(next);
                    }
                }
            }
            let connected = seen.len() == open.len();
            if !(mirrored && round_trip && connected) {
                failures += 1;
            }
        }
        out.record(8, failures == 0, format!("1000 episodes, {failures} invariant failures"));
    }

    // --- trained-model criteria -------------------------------------------

    // 1: Simple recall — only the memory-conditioned model recovers the color.
    {
        let root = simple_fixture();
        let episodes = build_simple_dataset();
        let full = load_world_model(&root, ModelKind::Full, None).unwrap();
        let ablate = load_world_model(&root, ModelKind::AblateState, None).unwrap();
        let full_ok = recall_correct(&full, &episodes);
        let ablate_ok = recall_correct(&ablate, &episodes);
        out.record(
            1,
            full_ok >= 30 && ablate_ok <= 17,
            format!("marker recall {full_ok}/34 with memory (need >=30), {ablate_ok}/34 without (need <=17)"),
        );
    }

    // 2 + 3: ordering and recall-curve shape at context 16.
    let maze_root = maze_fixture();
    let eval_set = eval_episodes(12);
    let full = load_world_model(&maze_root, ModelKind::Full, None).unwrap();
    let ablate = load_world_model(&maze_root, ModelKind::AblateState, None).unwrap();
    let rep_full = eval_next_frame(&full, &eval_set, 16, 0).unwrap();
    let rep_ablate = eval_next_frame(&ablate, &eval_set, 16, 0).unwrap();
    {
        let avg_gap = rep_full.avg_psnr - rep_ablate.avg_psnr;
        let fin_gap = rep_full.fin_psnr - rep_ablate.fin_psnr;
        out.record(
            2,
            avg_gap >= 2.0 && fin_gap >= 3.0,
            format!(
                "context 16: avg {:.2} vs {:.2} dB (gap {avg_gap:.2}, need >=2), final {:.2} vs {:.2} dB (gap {fin_gap:.2}, need >=3)",
                rep_full.avg_psnr, rep_ablate.avg_psnr, rep_full.fin_psnr, rep_ablate.fin_psnr
            ),
        );
    }
    {
        let steps = rep_full.per_step_psnr.len();
        let first_gap = rep_full.per_step_psnr[0] - rep_ablate.per_step_psnr[0];
        let q = (steps / 4).max(1);
        let tail = |v: &[f64]| v[steps - q..].iter().sum::<f64>() / q as f64;
        let tail_gap = tail(&rep_full.per_step_psnr) - tail(&rep_ablate.per_step_psnr);
        out.record(
            3,
            first_gap <= 3.0 && tail_gap >= 2.0,
            format!(
                "per-step curve: step-1 gap {first_gap:.2} dB (need <=3), last-quarter gap {tail_gap:.2} dB (need >=2)"
            ),
        );
    }

    // 9: longer context at eval time than at training time.
    {
        let long_set = eval_episodes(8);
        let rep_f = eval_next_frame(&full, &long_set, 50, 0).unwrap();
        let rep_a = eval_next_frame(&ablate, &long_set, 50, 0).unwrap();
        out.record(
            9,
            rep_f.avg_psnr > rep_a.avg_psnr,
            format!(
                "trained at 16, evaluated at 50: avg {:.2} vs {:.2} dB",
                rep_f.avg_psnr, rep_a.avg_psnr
            ),
        );
    }

    // 10: recovery after noise on the middle context frames.
    {
        let noise_set = eval_episodes(8);
        let report =
            noise_robustness(&full, &noise_set, 20, &NoiseConfig::default(), 0).unwrap();
        let gain = report.recovery_psnr() - report.mean_noisy_psnr();
        out.record(
            10,
            gain >= 3.0,
            format!(
                "noisy-window mean {:.2} dB, 4 steps later {:.2} dB (gain {gain:.2}, need >=3)",
                report.mean_noisy_psnr(),
                report.recovery_psnr()
            ),
        );
    }

    // 11: sampler-seed stability.
    {
        let stab = seed_stability(&full, &eval_set, 16, 4, 1234).unwrap();
        out.record(
            11,
            stab.std_avg_psnr < 0.5,
            format!(
                "4 sampler seeds: avg_psnr {:.2} +- {:.3} dB (need std < 0.5)",
                stab.mean_avg_psnr, stab.std_avg_psnr
            ),
        );
    }

    // 12: freeze contract and eval-time checkpoint swap.
    {
        let lcb_hash = lcwm::checkpoint::blob_sha256(&maze_root.join("lcb")).unwrap();
        let sidecar = lcwm::checkpoint::read_sidecar(&maze_root.join("diffuser")).unwrap();
        let frozen = sidecar.upstream.get("lcb") == Some(&lcb_hash);

        // Train a small alternate stage-1 checkpoint and swap it in at eval
        // time without touching stage 2.
        let alt_root = fixtures_root().join("alt-lcb");
        let swapped = if alt_root.join("lcb").join("sidecar.json").exists() {
            true
        } else {
            std::fs::create_dir_all(&alt_root).unwrap();
            copy_dir(&maze_root.join("tokenizer"), &alt_root.join("tokenizer"));
            let mut cfg = desk_run_config(maze_root.join("data"), 16);
            cfg.iterations = 200;
            cfg.lr = 3e-4;
            cfg.seed = 1;
            train_stage_lcb(&cfg, &alt_root).is_ok()
        };
        let swap_eval = load_world_model(&maze_root, ModelKind::Full, Some(&alt_root))
            .and_then(|m| eval_next_frame(&m, &eval_episodes(2), 16, 0));
        let swap_ok = swapped && matches!(&swap_eval, Ok(r) if r.avg_psnr.is_finite());
        out.record(
            12,
            frozen && swap_ok,
            format!(
                "stage-1 blob untouched by stage 2: {frozen}; eval with swapped stage-1 checkpoint: {}",
                match &swap_eval {
                    Ok(r) => format!("ok ({:.2} dB)", r.avg_psnr),
                    Err(e) => format!("failed ({e})"),
                }
            ),
        );
    }

    let failed: Vec<_> = out.lines.iter().filter(|(_, ok, _)| !ok).collect();
    assert!(
        failed.is_empty(),
        "{} acceptance criteria failed: {:?}",
        failed.len(),
        failed.iter().map(|(n, _, d)| format!("#{n}: {d}")).collect::<Vec<_>>()
    );
}

fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
    }
}
