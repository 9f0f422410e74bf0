//! Command-line entry point: data generation, the three training stages,
//! evaluation suites, plots, and a stdin-driven rollout for inspection.
//!
//! Every run writes a `resolved_config.json` snapshot next to its outputs so
//! results are reproducible from the snapshot alone. Config values resolve in
//! order: built-in defaults, then `--config` file, then `LCWM_*` environment
//! variables, then `--set key=value` overrides.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use lcwm::error::{Error, Result};
use lcwm::evalkit::{
    self, episode_seeds, line_plot, MetricsReport, NoiseConfig, Series,
};
use lcwm::gridworld::{
    build_episode, build_simple_dataset, read_dataset, write_dataset, Action, MazeSpec,
};
use lcwm::trainer::{self, RunConfig};
use lcwm::world::ModelKind;

#[derive(Parser)]
#[command(name = "lcwm", about = "Long-context world model over mirrored gridworld episodes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; fields mirror the run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set seq_len=16 or --set lcb.backbone=gru.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint root produced by the training stages.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory of evaluation episodes.
    #[arg(long)]
    data: PathBuf,
    /// Which prediction path to bundle: full, ablate_state, or ssm_only.
    #[arg(long, default_value = "full")]
    kind: String,
    /// Context length L (actions); L/2 forward, L/2 mirrored.
    #[arg(long, default_value_t = 16)]
    context: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Alternate stage-1 checkpoint root to swap in at eval time.
    #[arg(long)]
    lcb_from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset of mirrored maze episodes (or the Simple set).
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 0: train the frame autoencoder.
    TrainTokenizer {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train the long-context branch (requires the tokenizer).
    TrainLcb {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: train the diffusion branch (requires stages 0 and 1).
    TrainDiffuser {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-forced or imagination evaluation; writes report.json.
    Eval {
        #[command(flatten)]
        eval: EvalArgs,
        /// next_frame or imagination.
        #[arg(long, default_value = "next_frame")]
        mode: String,
    },
    /// Per-step PSNR of full vs ablate_state; writes CSV, PNG and reports.
    RecallCurve {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Noise-robustness protocol on the middle context frames.
    NoiseEval {
        #[command(flatten)]
        eval: EvalArgs,
        /// Noise standard deviation (interpreted per --scale).
        #[arg(long, default_value_t = 2.5)]
        std: f64,
        /// Number of corrupted frames centered on the midpoint.
        #[arg(long, default_value_t = 11)]
        window: usize,
        /// pixel255 (std / 255 on [0,1] frames) or normalized ([-1,1] copy).
        #[arg(long, default_value = "pixel255")]
        scale: String,
        /// ssm_input (long-context branch only) or all_inputs.
        #[arg(long, default_value = "all_inputs")]
        target: String,
    },
    /// Evaluate at a longer context than the model was trained on.
    GenEval {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Repeat the eval across sampler seeds; reports mean and std.
    SeedsEval {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 4)]
        n_seeds: usize,
    },
    /// Read action letters (N/E/S/W) from stdin; write one predicted PNG per
    /// action, starting from a dataset episode's first half.
    Rollout {
        #[command(flatten)]
        eval: EvalArgs,
        /// Episode index within the dataset.
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
    /// Combine MetricsReport JSON files into a summary CSV and a PSNR plot.
    Report {
        /// Report JSON files to combine.
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Dataset generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenConfig {
    size: usize,
    marker_count: usize,
    difficulty: u8,
    episodes: usize,
    base_seed: u64,
    /// Emit the fixed 34-episode recall dataset instead of random mazes.
    simple: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            size: 21,
            marker_count: 60,
            difficulty: 3,
            episodes: 500,
            base_seed: 0,
            simple: false,
        }
    }
}

/// Resolves a config: defaults <- file <- LCWM_* env vars <- --set overrides.
/// Unknown keys anywhere are rejected.
fn resolve_config<T: Serialize + DeserializeOwned + Default>(args: &ConfigArgs) -> Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = &args.config {
        let file: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        merge_checked(&mut value, &file, "")?;
    }
    for (key, raw) in std::env::vars() {
        if let Some(field) = key.strip_prefix("LCWM_") {
            let path = field.to_lowercase();
            // Env vars may name fields this config doesn't have; skip those.
            if lookup(&value, &path).is_some() {
                set_path(&mut value, &path, parse_scalar(&raw))?;
            }
        }
    }
    for ov in &args.overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
        set_path(&mut value, key, parse_scalar(raw))?;
    }
    Ok(serde_json::from_value(value)?)
}

/// Merges `src` into `dst`, erroring on keys `dst` doesn't already have.
fn merge_checked(dst: &mut serde_json::Value, src: &serde_json::Value, path: &str) -> Result<()> {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(k) {
                    Some(slot) => merge_checked(slot, v, &sub)?,
                    None => return Err(Error::Config(format!("unknown config key {sub:?}"))),
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s.clone();
            Ok(())
        }
    }
}

fn lookup<'a>(value: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    path.split('.').try_fold(value, |v, k| v.get(k))
}

fn set_path(value: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let mut slot = value;
    for key in path.split('.') {
        slot = slot
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
    }
    *slot = new;
    Ok(())
}

/// Interprets an override value as JSON when possible, else as a string
/// (so both `seq_len=16` and `backbone=gru` work unquoted).
fn parse_scalar(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

fn write_snapshot<T: Serialize>(out: &Path, config: &T) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved_config.json"), serde_json::to_vec_pretty(config)?)?;
    Ok(())
}

fn load_model(eval: &EvalArgs) -> Result<lcwm::world::WorldModel> {
    let kind: ModelKind = eval.kind.parse()?;
    trainer::load_world_model(&eval.model, kind, eval.lcb_from.as_deref())
}

fn write_report(out: &Path, name: &str, report: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(name), serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    model: &'a Path,
    data: &'a Path,
    kind: &'a str,
    context: usize,
    seed: u64,
    mode: &'a str,
}

fn snapshot_eval(eval: &EvalArgs, mode: &str) -> Result<()> {
    write_snapshot(
        &eval.out,
        &EvalSnapshot {
            model: &eval.model,
            data: &eval.data,
            kind: &eval.kind,
            context: eval.context,
            seed: eval.seed,
            mode,
        },
    )
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData { cfg, out } => {
            let gc: GenConfig = resolve_config(&cfg)?;
            write_snapshot(&out, &gc)?;
            let episodes = if gc.simple {
                build_simple_dataset()
            } else {
                let spec = MazeSpec {
                    size: gc.size,
                    marker_count: gc.marker_count,
                    difficulty: gc.difficulty,
                    ..Default::default()
                };
                spec.validate()?;
                episode_seeds(gc.base_seed, gc.episodes)
                    .into_iter()
                    .map(|s| build_episode(&spec, s))
                    .collect::<Result<Vec<_>>>()?
            };
            write_dataset(&out, &episodes)?;
            println!("wrote {} episodes to {}", episodes.len(), out.display());
        }
        Cmd::TrainTokenizer { cfg, out } => {
            let rc: RunConfig = resolve_config(&cfg)?;
            write_snapshot(&out, &rc)?;
            let res = trainer::train_stage_tokenizer(&rc, &out)?;
            println!("tokenizer checkpoint at {}", res.checkpoint_dir.display());
        }
        Cmd::TrainLcb { cfg, out } => {
            let rc: RunConfig = resolve_config(&cfg)?;
            write_snapshot(&out, &rc)?;
            let res = trainer::train_stage_lcb(&rc, &out)?;
            println!("long-context checkpoint at {}", res.checkpoint_dir.display());
        }
        Cmd::TrainDiffuser { cfg, out } => {
            let rc: RunConfig = resolve_config(&cfg)?;
            write_snapshot(&out, &rc)?;
            let res = trainer::train_stage_diffuser(&rc, &out)?;
            println!("diffuser checkpoint at {}", res.checkpoint_dir.display());
        }
        Cmd::Eval { eval, mode } => {
            snapshot_eval(&eval, &mode)?;
            let model = load_model(&eval)?;
            let episodes = read_dataset(&eval.data)?;
            let report = match mode.as_str() {
                "next_frame" => {
                    evalkit::eval_next_frame(&model, &episodes, eval.context, eval.seed)?
                }
                "imagination" => {
                    evalkit::eval_imagination(&model, &episodes, eval.context, eval.seed)?
                }
                other => return Err(Error::Config(format!("unknown eval mode {other:?}"))),
            };
            write_report(&eval.out, "report.json", &report)?;
            println!(
                "avg_psnr {:.2} dB  fin_psnr {:.2} dB  ssim {:.4}",
                report.avg_psnr, report.fin_psnr, report.ssim
            );
        }
        Cmd::RecallCurve { eval } => {
            snapshot_eval(&eval, "recall_curve")?;
            let full = load_model(&eval)?;
            let ablate =
                trainer::load_world_model(&eval.model, ModelKind::AblateState, eval.lcb_from.as_deref())?;
            let episodes = read_dataset(&eval.data)?;
            let curve =
                evalkit::recall_curve(&full, &ablate, &episodes, eval.context, eval.seed)?;
            std::fs::write(eval.out.join("recall.csv"), curve.to_csv())?;
            line_plot(
                &eval.out.join("recall.png"),
                &[
                    Series { label: "full", values: &curve.full.per_step_psnr },
                    Series { label: "ablate_state", values: &curve.ablate.per_step_psnr },
                ],
            )?;
            write_report(&eval.out, "report_full.json", &curve.full)?;
            write_report(&eval.out, "report_ablate.json", &curve.ablate)?;
            println!(
                "full avg {:.2} dB vs ablate {:.2} dB; outputs in {}",
                curve.full.avg_psnr,
                curve.ablate.avg_psnr,
                eval.out.display()
            );
        }
        Cmd::NoiseEval { eval, std, window, scale, target } => {
            snapshot_eval(&eval, "noise_robustness")?;
            let noise = NoiseConfig {
                std,
                window,
                scale: match scale.as_str() {
                    "pixel255" => evalkit::NoiseScale::Pixel255,
                    "normalized" => evalkit::NoiseScale::Normalized,
                    other => {
                        return Err(Error::Config(format!("unknown noise scale {other:?}")))
                    }
                },
                target: match target.as_str() {
                    "ssm_input" => evalkit::NoiseTarget::SsmInput,
                    "all_inputs" => evalkit::NoiseTarget::AllInputs,
                    other => {
                        return Err(Error::Config(format!("unknown noise target {other:?}")))
                    }
                },
            };
            let model = load_model(&eval)?;
            let episodes = read_dataset(&eval.data)?;
            let report =
                evalkit::noise_robustness(&model, &episodes, eval.context, &noise, eval.seed)?;
            write_report(&eval.out, "noise_report.json", &report)?;
            line_plot(
                &eval.out.join("noise.png"),
                &[Series { label: "psnr", values: &report.report.per_step_psnr }],
            )?;
            println!(
                "noisy-step mean {:.2} dB, recovery (+4) {:.2} dB",
                report.mean_noisy_psnr(),
                report.recovery_psnr()
            );
        }
        Cmd::GenEval { eval } => {
            snapshot_eval(&eval, "generalization")?;
            let model = load_model(&eval)?;
            let episodes = read_dataset(&eval.data)?;
            let report =
                evalkit::generalization_eval(&model, &episodes, eval.context, eval.seed)?;
            write_report(&eval.out, "report.json", &report)?;
            println!("avg_psnr {:.2} dB at context {}", report.avg_psnr, eval.context);
        }
        Cmd::SeedsEval { eval, n_seeds } => {
            snapshot_eval(&eval, "seed_stability")?;
            let model = load_model(&eval)?;
            let episodes = read_dataset(&eval.data)?;
            let stab =
                evalkit::seed_stability(&model, &episodes, eval.context, n_seeds, eval.seed)?;
            write_report(&eval.out, "seed_stability.json", &stab)?;
            println!(
                "avg_psnr {:.2} ± {:.3} dB over {n_seeds} seeds",
                stab.mean_avg_psnr, stab.std_avg_psnr
            );
        }
        Cmd::Rollout { eval, episode } => {
            snapshot_eval(&eval, "rollout")?;
            let model = load_model(&eval)?;
            let episodes = read_dataset(&eval.data)?;
            let ep = episodes
                .get(episode)
                .ok_or_else(|| Error::Config(format!("episode {episode} out of range")))?;
            let mid = ep.meta.midpoint;
            let mut obs: Vec<_> = ep.observations[..=mid].to_vec();
            let mut actions = ep.actions[..mid].to_vec();
            std::fs::create_dir_all(&eval.out)?;
            let stdin = std::io::stdin();
            let mut step = 0usize;
            for line in stdin.lock().lines() {
                for code in line?.split_whitespace() {
                    let action = Action::from_code(code)
                        .ok_or_else(|| Error::Config(format!("unknown action {code:?}")))?;
                    actions.push(action);
                    let refs: Vec<_> = obs.iter().collect();
                    let next = model.predict_next(
                        &refs,
                        &actions,
                        eval.seed.wrapping_add(step as u64),
                    )?;
                    let png = eval.out.join(format!("step_{step:03}.png"));
                    next.save_png(&png)?;
                    println!("{}", png.display());
                    obs.push(next);
                    step += 1;
                }
            }
        }
        Cmd::Report { inputs, out } => {
            std::fs::create_dir_all(&out)?;
            let mut reports = Vec::new();
            for path in &inputs {
                let r: MetricsReport = serde_json::from_slice(&std::fs::read(path)?)?;
                reports.push((path.clone(), r));
            }
            let mut csv =
                String::from("model_id,mode,context_len,seed,avg_psnr,fin_psnr,ssim\n");
            for (_, r) in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{:.4},{:.4},{:.4}\n",
                    r.model_id, r.mode, r.context_len, r.seed, r.avg_psnr, r.fin_psnr, r.ssim
                ));
            }
            std::fs::write(out.join("summary.csv"), csv)?;
            let series: Vec<Series> = reports
                .iter()
                .map(|(_, r)| Series { label: r.model_id.as_str(), values: &r.per_step_psnr })
                .collect();
            if reports.iter().any(|(_, r)| r.per_step_psnr.len() >= 2) {
                line_plot(&out.join("per_step_psnr.png"), &series)?;
            }
            println!("summary for {} reports in {}", reports.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
