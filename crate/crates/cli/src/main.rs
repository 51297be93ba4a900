//! `replay-bench`: benchmark and training harness for the
//! device-resident experience replay.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 config error.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::Config;
use replay_core::bench::{
    bench_add, bench_add_experiences, bench_train, training_throughput_row, BenchResultRow,
    TrainBenchSpec, REFERENCE_DEVICE_ADD_US_AT_2000, REFERENCE_END_TO_END_SPEEDUP,
    REFERENCE_HOST_ADD_US, REFERENCE_SPEEDUP_TABLE,
};
use replay_core::error::{Error, Result};
use replay_core::io::{read_experience_dump_file, save_checkpoint, write_experience_dump_file};
use replay_core::train::{evaluate_greedy, random_policy_mean_length, run_training};
use replay_core::verify::run_all;

#[derive(Parser)]
#[command(
    name = "replay-bench",
    about = "Device-resident experience replay: benchmarks, training, and self-checks",
    version
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; unset flags fall back to the
/// config file, then to defaults.
#[derive(Args)]
struct Overrides {
    /// TOML config file applied under the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    capacity: Option<usize>,
    #[arg(long, global = true)]
    update_size: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    min_sample_size: Option<usize>,
    /// Resample duplicate indices so batches hold distinct experiences.
    #[arg(long, global = true)]
    distinct_sampling: bool,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Train steps between target-network syncs.
    #[arg(long, global = true)]
    sync_period: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// host, device, or both.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// simulated (deterministic cost model) or accelerator (wall clock).
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Per-transfer overhead of the cost model, microseconds.
    #[arg(long, global = true)]
    overhead_us: Option<f64>,
    /// Cost-model bandwidth, gigabytes per second.
    #[arg(long, global = true)]
    bandwidth_gbps: Option<f64>,
    /// Device memory limit in bytes.
    #[arg(long, global = true)]
    memory_limit_bytes: Option<u64>,
    /// Fixed compute cost per simulated train step, microseconds.
    #[arg(long, global = true)]
    step_overhead_us: Option<f64>,
    /// Per-sample compute cost per simulated train step, microseconds.
    #[arg(long, global = true)]
    per_sample_us: Option<f64>,
    /// CSV output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep update sizes and report the mean cost per added experience.
    BenchAdd {
        /// Comma-separated update sizes; each must divide capacity.
        #[arg(long, value_delimiter = ',')]
        update_sizes: Option<Vec<usize>>,
        /// Experiences to ingest per update size.
        #[arg(long)]
        n_experiences: Option<usize>,
        /// Bulk-load experiences from a binary dump instead of synthesizing.
        #[arg(long)]
        from_dump: Option<PathBuf>,
    },
    /// Time train steps and account bytes for host vs device replay.
    BenchTrain {
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        /// Train steps per (mode, batch size) cell.
        #[arg(long)]
        n_steps: Option<u64>,
        /// Experiences ingested before each train step.
        #[arg(long)]
        adds_per_step: Option<u64>,
    },
    /// Train the dueling agent on the synthetic environment.
    Train {
        #[arg(long)]
        frames: Option<u64>,
        /// Checkpoint path for the final online network.
        #[arg(long, default_value = "dueling.ckpt")]
        checkpoint: PathBuf,
        /// Write one `step,loss` line per train step.
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Dump every generated experience to this binary file.
        #[arg(long)]
        dump_experiences: Option<PathBuf>,
        /// Evaluation episodes for the final greedy-vs-random report.
        #[arg(long)]
        eval_episodes: Option<u64>,
        /// Skip the final evaluation.
        #[arg(long)]
        no_eval: bool,
    },
    /// Run the invariant self-checks; non-zero exit on any failure.
    Verify,
    /// Print the effective configuration as TOML.
    DumpConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn effective_config(o: &Overrides) -> Result<Config> {
    let mut cfg = match &o.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = &o.$field { cfg.$field = v.clone(); })*
        };
    }
    overlay!(
        capacity,
        update_size,
        batch_size,
        min_sample_size,
        alpha,
        gamma,
        sync_period,
        seed,
        mode,
        backend,
        overhead_us,
        bandwidth_gbps,
        memory_limit_bytes,
        step_overhead_us,
        per_sample_us
    );
    if o.distinct_sampling {
        cfg.distinct_sampling = true;
    }
    Ok(cfg)
}

fn emit_rows(rows: &[BenchResultRow], out: &Option<PathBuf>) -> Result<()> {
    let mut text = String::from(BenchResultRow::CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = effective_config(&cli.overrides)?;
    match cli.command {
        Command::BenchAdd {
            update_sizes,
            n_experiences,
            from_dump,
        } => {
            let sizes = update_sizes.unwrap_or_else(|| cfg.update_sizes.clone());
            let params = cfg.bench_params()?;
            let rows = match from_dump {
                Some(path) => {
                    let exps = read_experience_dump_file(&path, &cfg.layout()?)?;
                    eprintln!("loaded {} experiences from {}", exps.len(), path.display());
                    bench_add_experiences(&params, &sizes, &exps)?
                }
                None => bench_add(&params, &sizes, n_experiences.unwrap_or(cfg.n_experiences))?,
            };
            emit_rows(&rows, &cli.overrides.out)?;
            eprintln!(
                "reference (TITAN X Pascal): {REFERENCE_HOST_ADD_US} us/add in-RAM, \
                 {REFERENCE_DEVICE_ADD_US_AT_2000} us/add on-device at update size 2000 (~27x)"
            );
            Ok(true)
        }
        Command::BenchTrain {
            batch_sizes,
            n_steps,
            adds_per_step,
        } => {
            let batches = batch_sizes.unwrap_or_else(|| cfg.batch_sizes.clone());
            let params = cfg.bench_params()?;
            let spec = TrainBenchSpec {
                n_steps: n_steps.unwrap_or(cfg.n_steps),
                adds_per_step: adds_per_step.unwrap_or(cfg.adds_per_step),
                update_size: cfg.update_size,
                trainer: cfg.trainer_config()?,
            };
            let report = bench_train(&params, &spec, &batches, &cfg.modes()?)?;
            emit_rows(&report.rows, &cli.overrides.out)?;
            for (batch, speedup) in &report.speedups {
                let reference = REFERENCE_SPEEDUP_TABLE
                    .iter()
                    .find(|(b, _)| b == batch)
                    .map(|(_, s)| format!(" (reference TITAN X Pascal: {s}%)"))
                    .unwrap_or_default();
                eprintln!("batch {batch}: device over host speedup {speedup:.2}%{reference}");
            }
            for (batch, s) in REFERENCE_END_TO_END_SPEEDUP {
                eprintln!("reference end-to-end training speedup at batch {batch}: {s}%");
            }
            Ok(true)
        }
        Command::Train {
            frames,
            checkpoint,
            loss_log,
            dump_experiences,
            eval_episodes,
            no_eval,
        } => {
            let run_cfg = {
                let mut c = cfg.clone();
                if let Some(f) = frames {
                    c.frames = f;
                }
                c.train_run_config()?
            };
            let device = cfg.device()?;
            let started = Instant::now();
            let summary = run_training(&run_cfg, &device, |p| {
                eprintln!(
                    "frames {:>8}  episodes {:>5}  train steps {:>7}  eps {:.3}  \
                     mean episode len {:>6.1}  mean loss {:.4}",
                    p.frames,
                    p.episodes,
                    p.train_steps,
                    p.epsilon,
                    p.mean_recent_episode_len,
                    p.mean_recent_loss
                );
            })?;
            let wall = started.elapsed().as_secs_f64();

            save_checkpoint(&checkpoint, &summary.params)?;
            eprintln!("checkpoint written to {}", checkpoint.display());
            if let Some(path) = &loss_log {
                let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                writeln!(w, "step,loss")?;
                for (i, loss) in summary.losses.iter().enumerate() {
                    writeln!(w, "{},{loss:e}", i + 1)?;
                }
                w.flush()?;
            }
            if let Some(path) = &dump_experiences {
                // Re-generate the identical run's experiences is wasteful;
                // instead dump what the final policy produces on eval seeds.
                let exps = rollout_greedy(&summary.params, 20, cfg.seed.wrapping_add(1))?;
                let n = write_experience_dump_file(path, &exps, &cfg.layout()?)?;
                eprintln!("dumped {n} experiences to {}", path.display());
            }

            eprintln!(
                "trained {} frames, {} episodes, {} train steps in {wall:.1}s; \
                 target syncs at steps {:?}",
                summary.frames, summary.episodes, summary.train_steps, summary.sync_steps
            );
            eprintln!(
                "transfer: {} bytes to device over {} transfers, {} bytes back",
                summary.transfer.bytes_to_device,
                summary.transfer.transfers_to_device,
                summary.transfer.bytes_from_device
            );

            if !no_eval {
                let episodes = eval_episodes.unwrap_or(cfg.eval_episodes);
                let eval_base = 9_000_000;
                let random = random_policy_mean_length(episodes, eval_base)?;
                let greedy = evaluate_greedy(&summary.params, episodes, eval_base)?;
                eprintln!(
                    "eval over {episodes} held-out seeds: greedy {greedy:.1} vs random {random:.1} \
                     mean episode length ({:+.1}%)",
                    (greedy / random - 1.0) * 100.0
                );
            }
            if cli.overrides.out.is_some() {
                emit_rows(
                    &[training_throughput_row(&run_cfg, wall)],
                    &cli.overrides.out,
                )?;
            }
            Ok(true)
        }
        Command::Verify => {
            let checks = run_all(cfg.seed);
            let mut all_passed = true;
            for check in &checks {
                let status = if check.passed { "PASS" } else { "FAIL" };
                println!("{status}  {} — {}", check.name, check.detail);
                all_passed &= check.passed;
            }
            println!(
                "{}/{} checks passed",
                checks.iter().filter(|c| c.passed).count(),
                checks.len()
            );
            Ok(all_passed)
        }
        Command::DumpConfig => {
            print!("{}", cfg.to_toml());
            Ok(true)
        }
    }
}

/// Experiences from greedy rollouts of a trained policy, for dump files.
fn rollout_greedy(
    params: &replay_core::dueling::DuelingParams<f32>,
    episodes: u64,
    seed_base: u64,
) -> Result<Vec<replay_core::Experience>> {
    use rand::SeedableRng;
    let mut out = Vec::new();
    for i in 0..episodes {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_base + i);
        let mut state = replay_core::env::reset(seed_base + i);
        loop {
            let states = replay_core::Mat::from_rows(&[state.as_slice()]);
            let q = replay_core::dueling::forward(params, &states)?;
            let action = replay_core::dueling::greedy_action(q.row(0));
            let result = replay_core::env::step(&state, action, &mut rng)?;
            out.push(replay_core::Experience {
                old_state: state.to_vec(),
                action,
                reward: result.reward,
                new_state: result.next_state.to_vec(),
                terminal: result.terminal,
            });
            if result.terminal {
                break;
            }
            state = result.next_state;
        }
    }
    Ok(out)
}
