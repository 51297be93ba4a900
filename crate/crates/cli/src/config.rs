//! Effective run configuration: defaults, overlaid by an optional TOML
//! config file, overlaid by command-line flags.

use serde::{Deserialize, Serialize};
use std::path::Path;

use replay_core::bench::{BackendKind, BenchParams, ComputeModel};
use replay_core::device::{CostModel, Device, Timing, DEFAULT_MEMORY_LIMIT};
use replay_core::dueling::TrainerConfig;
use replay_core::error::{Error, Result};
use replay_core::experience::RowLayout;
use replay_core::pipeline::ReplayMode;
use replay_core::replay::ReplayConfig;
use replay_core::train::TrainRunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // Replay geometry.
    pub capacity: usize,
    pub update_size: usize,
    pub min_sample_size: usize,
    pub distinct_sampling: bool,
    pub state_dim: usize,

    // Trainer.
    pub batch_size: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub sync_period: u64,
    pub num_actions: usize,

    // Modes and backend.
    pub mode: String,
    pub backend: String,

    // Cost model (transfers) and compute model (train steps).
    pub overhead_us: f64,
    pub bandwidth_gbps: f64,
    pub memory_limit_bytes: u64,
    pub step_overhead_us: f64,
    pub per_sample_us: f64,

    // Training run.
    pub frames: u64,
    pub train_every: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_frames: u64,
    pub eval_episodes: u64,

    // Benchmark sweeps.
    pub update_sizes: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub n_experiences: usize,
    pub n_steps: u64,
    pub adds_per_step: u64,

    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            capacity: 100_000,
            update_size: 2000,
            min_sample_size: 2000,
            distinct_sampling: false,
            state_dim: 27,
            batch_size: 32,
            alpha: 1e-4,
            gamma: 0.99,
            sync_period: 10_000,
            num_actions: 8,
            mode: "both".into(),
            backend: "simulated".into(),
            overhead_us: 20.0,
            bandwidth_gbps: 6.0,
            memory_limit_bytes: DEFAULT_MEMORY_LIMIT,
            step_overhead_us: 50.0,
            per_sample_us: 0.025,
            frames: 100_000,
            train_every: 4,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frames: 60_000,
            eval_episodes: 100,
            update_sizes: vec![10, 100, 500, 2000, 10_000],
            batch_sizes: vec![16, 32, 64, 128, 256],
            n_experiences: 100_000,
            n_steps: 200,
            adds_per_step: 2,
            seed: 0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        CostModel::new(self.overhead_us * 1e-6, self.bandwidth_gbps * 1e9)
    }

    pub fn compute_model(&self) -> ComputeModel {
        ComputeModel {
            step_overhead_s: self.step_overhead_us * 1e-6,
            per_sample_s: self.per_sample_us * 1e-6,
        }
    }

    pub fn backend_kind(&self) -> Result<BackendKind> {
        match self.backend.as_str() {
            "simulated" => Ok(BackendKind::Simulated),
            // No accelerator in this build: the wall-clock backend
            // stands in, timing the memory traffic it actually performs.
            "accelerator" => Ok(BackendKind::WallClock),
            other => Err(Error::InvalidConfig(format!(
                "backend must be simulated or accelerator, got {other:?}"
            ))),
        }
    }

    /// Modes selected by `--mode host|device|both`.
    pub fn modes(&self) -> Result<Vec<ReplayMode>> {
        match self.mode.as_str() {
            "host" => Ok(vec![ReplayMode::Host]),
            "device" => Ok(vec![ReplayMode::Device]),
            "both" => Ok(vec![ReplayMode::Host, ReplayMode::Device]),
            other => Err(Error::InvalidConfig(format!(
                "mode must be host, device, or both, got {other:?}"
            ))),
        }
    }

    /// Single mode for subcommands that train one agent.
    pub fn single_mode(&self) -> Result<ReplayMode> {
        match self.mode.as_str() {
            "host" => Ok(ReplayMode::Host),
            "device" | "both" => Ok(ReplayMode::Device),
            other => Err(Error::InvalidConfig(format!(
                "mode must be host or device, got {other:?}"
            ))),
        }
    }

    pub fn device(&self) -> Result<Device> {
        let timing = match self.backend_kind()? {
            BackendKind::Simulated => Timing::Simulated(self.cost_model()?),
            BackendKind::WallClock => Timing::WallClock,
        };
        Ok(Device::new(timing, self.memory_limit_bytes))
    }

    pub fn layout(&self) -> Result<RowLayout> {
        RowLayout::new(self.state_dim)
    }

    pub fn replay_config(&self) -> Result<ReplayConfig> {
        let mut cfg = ReplayConfig::new(self.capacity, self.update_size, self.layout()?);
        cfg.min_sample_size = self.min_sample_size;
        cfg.distinct_sampling = self.distinct_sampling;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let cfg = TrainerConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            target_sync_period: self.sync_period,
            batch_size: self.batch_size,
            num_actions: self.num_actions,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bench_params(&self) -> Result<BenchParams> {
        Ok(BenchParams {
            seed: self.seed,
            state_dim: self.state_dim,
            capacity: self.capacity,
            min_sample_size: self.min_sample_size,
            cost: self.cost_model()?,
            compute: self.compute_model(),
            backend: self.backend_kind()?,
            memory_limit: self.memory_limit_bytes,
        })
    }

    pub fn train_run_config(&self) -> Result<TrainRunConfig> {
        let cfg = TrainRunConfig {
            frames: self.frames,
            seed: self.seed,
            mode: self.single_mode()?,
            replay: self.replay_config()?,
            trainer: self.trainer_config()?,
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            eps_decay_frames: self.eps_decay_frames,
            train_every: self.train_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
