//! Benchmark experiments: update-size sweep for the per-add cost curve,
//! train-step timing and byte accounting for host-resident vs
//! device-resident replay, and the speedup summary.
//!
//! Under the simulated backend every reported number is a deterministic
//! function of the seed and the cost models, so rows reproduce
//! bit-for-bit. The wall-clock backend reports measured times and is
//! informative only.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device::{CostModel, Device, Timing, BYTES_PER_FLOAT, DEFAULT_MEMORY_LIMIT};
use crate::dueling::{train_step, DuelingParams, TrainerConfig, TrainerState};
use crate::error::{Error, Result};
use crate::experience::{Experience, RowLayout};
use crate::pipeline::{ReplayMode, SamplePipeline};
use crate::replay::{HostReplay, ReplayConfig};
use crate::train::TrainRunConfig;

/// Deterministic per-train-step compute cost: a fixed launch cost plus a
/// per-sample term. Together with the transfer cost model this makes the
/// simulated step clock fully deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeModel {
    pub step_overhead_s: f64,
    pub per_sample_s: f64,
}

impl ComputeModel {
    pub fn step_seconds(&self, batch_size: usize) -> f64 {
        self.step_overhead_s + batch_size as f64 * self.per_sample_s
    }
}

impl Default for ComputeModel {
    fn default() -> Self {
        Self {
            step_overhead_s: 50e-6,
            per_sample_s: 25e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Deterministic cost-model clock; the backend all assertions use.
    Simulated,
    /// Wall-clock measurements of the actual memory traffic and compute.
    WallClock,
}

/// One measurement row of the CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResultRow {
    pub experiment: String,
    pub mode: String,
    /// The swept parameter: update_size or batch_size (0 where not applicable).
    pub param: u64,
    pub value: f64,
    pub units: &'static str,
    pub n: u64,
    pub seed: u64,
}

impl BenchResultRow {
    pub const CSV_HEADER: &'static str = "experiment,mode,param,value,units,n,seed";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.experiment, self.mode, self.param, self.value, self.units, self.n, self.seed
        )
    }
}

/// Shared experiment parameters.
#[derive(Debug, Clone, Copy)]
pub struct BenchParams {
    pub seed: u64,
    pub state_dim: usize,
    pub capacity: usize,
    pub min_sample_size: usize,
    pub cost: CostModel,
    pub compute: ComputeModel,
    pub backend: BackendKind,
    pub memory_limit: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            seed: 0,
            state_dim: 27,
            capacity: 100_000,
            min_sample_size: 2000,
            cost: CostModel::default(),
            compute: ComputeModel::default(),
            backend: BackendKind::Simulated,
            memory_limit: DEFAULT_MEMORY_LIMIT,
        }
    }
}

impl BenchParams {
    pub fn device(&self) -> Device {
        let timing = match self.backend {
            BackendKind::Simulated => Timing::Simulated(self.cost),
            BackendKind::WallClock => Timing::WallClock,
        };
        Device::new(timing, self.memory_limit)
    }

    pub fn layout(&self) -> Result<RowLayout> {
        RowLayout::new(self.state_dim)
    }

    pub fn row_bytes(&self) -> u64 {
        (2 * self.state_dim + 3) as u64 * BYTES_PER_FLOAT
    }
}

/// Deterministic stream of synthetic experiences for ingestion and
/// timing experiments.
pub fn synthetic_experiences(
    seed: u64,
    n: usize,
    state_dim: usize,
    num_actions: u32,
) -> Vec<Experience> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Experience {
            old_state: (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..num_actions),
            reward: rng.gen_range(-1.0..1.0),
            new_state: (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            terminal: rng.gen_bool(0.02),
        })
        .collect()
}

/// Mean cost of adding one experience to the device-resident replay for
/// each update size, plus the host-replay baseline row (param 0). The
/// experience count is rounded down to whole blocks per update size.
pub fn bench_add(
    p: &BenchParams,
    update_sizes: &[usize],
    n_experiences: usize,
) -> Result<Vec<BenchResultRow>> {
    let exps = synthetic_experiences(p.seed, n_experiences.max(1), p.state_dim, 8);
    bench_add_experiences(p, update_sizes, &exps)
}

/// [`bench_add`] over a caller-supplied experience stream, e.g. one
/// bulk-loaded from a binary dump.
pub fn bench_add_experiences(
    p: &BenchParams,
    update_sizes: &[usize],
    experiences: &[Experience],
) -> Result<Vec<BenchResultRow>> {
    let layout = p.layout()?;
    if experiences.is_empty() {
        return Err(Error::InvalidArgument(
            "bench-add needs at least one experience".into(),
        ));
    }
    let mut rows = Vec::new();

    for &update_size in update_sizes {
        if update_size == 0 || p.capacity % update_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "update_size {update_size} must be >= 1 and divide capacity {}",
                p.capacity
            )));
        }
        if experiences.len() < update_size {
            return Err(Error::InvalidArgument(format!(
                "need at least update_size = {update_size} experiences, have {}",
                experiences.len()
            )));
        }
        let n = (experiences.len() / update_size) * update_size;
        let exps = &experiences[..n];
        let device = p.device();
        let mut cfg = ReplayConfig::new(p.capacity, update_size, layout);
        cfg.min_sample_size = p.min_sample_size.min(p.capacity);
        let mut buf = crate::replay::ReplayBuffer::new(cfg, &device)?;
        for exp in exps {
            buf.add(exp.clone())?;
        }
        let stats = device.stats();
        rows.push(BenchResultRow {
            experiment: "add_cost".into(),
            mode: ReplayMode::Device.label().into(),
            param: update_size as u64,
            value: stats.time_s / n as f64 * 1e6,
            units: "us/add",
            n: n as u64,
            seed: p.seed,
        });
    }

    // Host baseline: a RAM append, no device traffic. Under the
    // simulated clock its transfer cost is zero; under wall clock the
    // measured append time is reported.
    let n = experiences.len();
    let mut host = HostReplay::new(p.capacity, p.min_sample_size.min(p.capacity), layout)?;
    let start = Instant::now();
    for exp in experiences {
        host.add(exp)?;
    }
    let host_seconds = match p.backend {
        BackendKind::Simulated => 0.0,
        BackendKind::WallClock => start.elapsed().as_secs_f64(),
    };
    rows.push(BenchResultRow {
        experiment: "add_cost".into(),
        mode: ReplayMode::Host.label().into(),
        param: 0,
        value: host_seconds / n as f64 * 1e6,
        units: "us/add",
        n: n as u64,
        seed: p.seed,
    });

    Ok(rows)
}

/// Everything bench_train produces: raw rows plus the derived percent
/// speedups (host step time over device step time, per batch size).
pub struct TrainBenchReport {
    pub rows: Vec<BenchResultRow>,
    pub speedups: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainBenchSpec {
    pub n_steps: u64,
    pub adds_per_step: u64,
    pub update_size: usize,
    pub trainer: TrainerConfig,
}

impl Default for TrainBenchSpec {
    fn default() -> Self {
        Self {
            n_steps: 200,
            adds_per_step: 2,
            update_size: 2000,
            trainer: TrainerConfig::default(),
        }
    }
}

/// Time train steps and account their bytes for each (mode, batch).
/// Burn-in fill happens before the measured window; within the window
/// each step ingests `adds_per_step` experiences and trains once.
pub fn bench_train(
    p: &BenchParams,
    spec: &TrainBenchSpec,
    batch_sizes: &[usize],
    modes: &[ReplayMode],
) -> Result<TrainBenchReport> {
    let layout = p.layout()?;
    let mut rows = Vec::new();
    let mut step_time_us: Vec<(ReplayMode, usize, f64)> = Vec::new();

    for &batch_size in batch_sizes {
        for &mode in modes {
            let device = p.device();
            let mut cfg = ReplayConfig::new(p.capacity, spec.update_size, layout);
            cfg.min_sample_size = p.min_sample_size.min(p.capacity);
            let mut pipeline = SamplePipeline::new(mode, cfg, &device)?;

            // Fill past burn-in, block-aligned so the measured window
            // starts with an empty staging queue.
            let fill = cfg
                .min_sample_size
                .max(batch_size)
                .div_ceil(spec.update_size)
                * spec.update_size;
            let mut trainer_cfg = spec.trainer;
            trainer_cfg.batch_size = batch_size;
            let exps = synthetic_experiences(
                p.seed ^ 0x5eed,
                fill + (spec.n_steps * spec.adds_per_step) as usize,
                p.state_dim,
                trainer_cfg.num_actions as u32,
            );
            let mut feed = exps.into_iter();
            for _ in 0..fill {
                pipeline.add(feed.next().expect("prefill stream"))?;
            }

            let net =
                DuelingParams::<f32>::new(p.state_dim, trainer_cfg.num_actions, p.seed ^ 0x6e7);
            let mut trainer = TrainerState::new(net);
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ batch_size as u64);

            let window_start = device.stats();
            let mut time_total_s = 0.0f64;
            let mut sample_bytes_total = 0u64;
            for _ in 0..spec.n_steps {
                for _ in 0..spec.adds_per_step {
                    pipeline.add(feed.next().expect("ingest stream"))?;
                }
                let before = device.stats();
                let wall = Instant::now();
                let batch = pipeline.sample(batch_size, &mut rng)?;
                train_step(&mut trainer, &batch, &trainer_cfg)?;
                let delta = device.stats().since(&before);
                sample_bytes_total += delta.bytes_to_device;
                time_total_s += match p.backend {
                    BackendKind::Simulated => {
                        p.compute.step_seconds(batch_size) + delta.time_s
                    }
                    BackendKind::WallClock => wall.elapsed().as_secs_f64(),
                };
            }
            let window = device.stats().since(&window_start);

            let mean_step_us = time_total_s / spec.n_steps as f64 * 1e6;
            step_time_us.push((mode, batch_size, mean_step_us));
            rows.push(BenchResultRow {
                experiment: "train_step_time".into(),
                mode: mode.label().into(),
                param: batch_size as u64,
                value: mean_step_us,
                units: "us/step",
                n: spec.n_steps,
                seed: p.seed,
            });
            rows.push(BenchResultRow {
                experiment: "train_step_bytes".into(),
                mode: mode.label().into(),
                param: batch_size as u64,
                value: sample_bytes_total as f64 / spec.n_steps as f64,
                units: "bytes",
                n: spec.n_steps,
                seed: p.seed,
            });
            rows.push(BenchResultRow {
                experiment: "train_window_bytes".into(),
                mode: mode.label().into(),
                param: batch_size as u64,
                value: window.bytes_to_device as f64,
                units: "bytes",
                n: spec.n_steps,
                seed: p.seed,
            });
        }
    }

    let mut speedups = Vec::new();
    for &batch_size in batch_sizes {
        let find = |m: ReplayMode| {
            step_time_us
                .iter()
                .find(|(mode, b, _)| *mode == m && *b == batch_size)
                .map(|(_, _, t)| *t)
        };
        if let (Some(t_host), Some(t_device)) = (find(ReplayMode::Host), find(ReplayMode::Device))
        {
            speedups.push((batch_size, (t_host / t_device - 1.0) * 100.0));
        }
    }

    Ok(TrainBenchReport { rows, speedups })
}

/// Train-step speedup percentages measured on the reference hardware
/// (TITAN X Pascal, update size 2000), per batch size. Printed as
/// annotations next to simulated results; never asserted.
pub const REFERENCE_SPEEDUP_TABLE: [(usize, f64); 5] = [
    (16, 30.54),
    (32, 54.87),
    (64, 67.08),
    (128, 114.41),
    (256, 114.35),
];

/// Per-add costs on the reference hardware: 1.4 us for the in-RAM ring,
/// 37.5 us for the device ring at update size 2000 (about 27x slower).
pub const REFERENCE_HOST_ADD_US: f64 = 1.4;
pub const REFERENCE_DEVICE_ADD_US_AT_2000: f64 = 37.5;

/// End-to-end training speedups on the reference hardware at batch
/// sizes 32 and 128.
pub const REFERENCE_END_TO_END_SPEEDUP: [(usize, f64); 2] = [(32, 57.8), (128, 104.3)];

/// Throughput row for a finished training run.
pub fn training_throughput_row(cfg: &TrainRunConfig, wall_seconds: f64) -> BenchResultRow {
    BenchResultRow {
        experiment: "train_run".into(),
        mode: cfg.mode.label().into(),
        param: cfg.trainer.batch_size as u64,
        value: cfg.frames as f64 / wall_seconds,
        units: "steps/s",
        n: cfg.frames,
        seed: cfg.seed,
    }
}
