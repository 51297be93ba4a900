//! Training loop: environment interaction, replay ingestion, and
//! periodic train steps, fully deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device::{Device, TransferStats};
use crate::dueling::{
    act_epsilon_greedy, forward, greedy_action, train_step, DuelingParams, TrainerConfig,
    TrainerState,
};
use crate::env;
use crate::error::{Error, Result};
use crate::experience::{Experience, RowLayout};
use crate::mat::Mat;
use crate::pipeline::{ReplayMode, SamplePipeline};
use crate::replay::ReplayConfig;

#[derive(Debug, Clone)]
pub struct TrainRunConfig {
    pub frames: u64,
    pub seed: u64,
    pub mode: ReplayMode,
    pub replay: ReplayConfig,
    pub trainer: TrainerConfig,
    /// Exploration schedule: linear from `eps_start` to `eps_end` over
    /// `eps_decay_frames`, then held.
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_frames: u64,
    /// Run one train step every this many frames once burn-in is done.
    pub train_every: u64,
}

impl TrainRunConfig {
    /// Desk-scale defaults on the synthetic environment.
    pub fn desk_scale(seed: u64) -> Self {
        let layout = RowLayout::new(env::STATE_DIM).expect("static dim");
        let mut replay = ReplayConfig::new(100_000, 2000, layout);
        replay.min_sample_size = 2000;
        Self {
            frames: 100_000,
            seed,
            mode: ReplayMode::Device,
            replay,
            trainer: TrainerConfig::default(),
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frames: 60_000,
            train_every: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.replay.validate()?;
        self.trainer.validate()?;
        if self.replay.layout.state_dim() != env::STATE_DIM {
            return Err(Error::InvalidConfig(format!(
                "training runs on the synthetic environment: state_dim must be {}",
                env::STATE_DIM
            )));
        }
        if self.trainer.num_actions != env::NUM_ACTIONS {
            return Err(Error::InvalidConfig(format!(
                "num_actions must be {} for the synthetic environment",
                env::NUM_ACTIONS
            )));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(Error::InvalidConfig("epsilon bounds must be in [0, 1]".into()));
        }
        if self.train_every == 0 {
            return Err(Error::InvalidConfig("train_every must be >= 1".into()));
        }
        Ok(())
    }

    fn epsilon_at(&self, frame: u64) -> f64 {
        if self.eps_decay_frames == 0 || frame >= self.eps_decay_frames {
            return self.eps_end;
        }
        let t = frame as f64 / self.eps_decay_frames as f64;
        self.eps_start + (self.eps_end - self.eps_start) * t
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProgressRow {
    pub frames: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub epsilon: f64,
    pub mean_recent_episode_len: f64,
    pub mean_recent_loss: f64,
}

pub struct TrainSummary {
    pub frames: u64,
    pub episodes: u64,
    pub train_steps: u64,
    /// One entry per train step, in order; the loss log.
    pub losses: Vec<f64>,
    pub episode_lengths: Vec<u32>,
    /// Train-step indices at which the target network synchronized.
    pub sync_steps: Vec<u64>,
    pub params: DuelingParams<f32>,
    pub transfer: TransferStats,
}

/// Run a seeded training session; deterministic in every output.
pub fn run_training(
    cfg: &TrainRunConfig,
    device: &Device,
    mut progress: impl FnMut(&ProgressRow),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut explore_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let net_seed: u64 = master.gen();

    let mut pipeline = SamplePipeline::new(cfg.mode, cfg.replay, device)?;
    let params = DuelingParams::<f32>::new(env::STATE_DIM, cfg.trainer.num_actions, net_seed);
    let mut trainer = TrainerState::new(params);

    let mut losses = Vec::new();
    let mut episode_lengths = Vec::new();
    let mut sync_steps = Vec::new();

    let mut episodes = 0u64;
    let mut episode_len = 0u32;
    let mut state = env::reset(master.gen());
    let progress_every = (cfg.frames / 20).max(1);

    for frame in 0..cfg.frames {
        let eps = cfg.epsilon_at(frame);
        let action = act_epsilon_greedy(&trainer.online, state.as_slice(), eps, &mut explore_rng)?;
        let result = env::step(&state, action, &mut env_rng)?;
        pipeline.add(Experience {
            old_state: state.to_vec(),
            action,
            reward: result.reward,
            new_state: result.next_state.to_vec(),
            terminal: result.terminal,
        })?;
        episode_len += 1;
        if result.terminal {
            episodes += 1;
            episode_lengths.push(episode_len);
            episode_len = 0;
            state = env::reset(master.gen());
        } else {
            state = result.next_state;
        }

        // Burn-in: train only once the replay is ready.
        if (frame + 1) % cfg.train_every == 0
            && pipeline.size() >= cfg.replay.min_sample_size
        {
            let batch = pipeline.sample(cfg.trainer.batch_size, &mut sample_rng)?;
            let loss = train_step(&mut trainer, &batch, &cfg.trainer)?;
            losses.push(loss);
            if trainer.step_count() % cfg.trainer.target_sync_period == 0 {
                sync_steps.push(trainer.step_count());
            }
        }

        if (frame + 1) % progress_every == 0 {
            let recent_eps: &[u32] =
                &episode_lengths[episode_lengths.len().saturating_sub(20)..];
            let recent_losses: &[f64] = &losses[losses.len().saturating_sub(200)..];
            progress(&ProgressRow {
                frames: frame + 1,
                episodes,
                train_steps: trainer.step_count(),
                epsilon: eps,
                mean_recent_episode_len: mean_u32(recent_eps),
                mean_recent_loss: mean_f64(recent_losses),
            });
        }
    }

    Ok(TrainSummary {
        frames: cfg.frames,
        episodes,
        train_steps: trainer.step_count(),
        losses,
        episode_lengths,
        sync_steps,
        params: trainer.online,
        transfer: device.stats(),
    })
}

fn mean_u32(v: &[u32]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

fn mean_f64(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean episode length of the greedy policy over held-out seeds
/// `seed_base .. seed_base + episodes`.
pub fn evaluate_greedy(
    params: &DuelingParams<f32>,
    episodes: u64,
    seed_base: u64,
) -> Result<f64> {
    let mut total = 0.0f64;
    for i in 0..episodes {
        let (len, _) = env::run_episode(seed_base + i, |s, _| {
            let states = Mat::from_rows(&[s.as_slice()]);
            let q = forward(params, &states).expect("finite policy network");
            greedy_action(q.row(0))
        })?;
        total += len as f64;
    }
    Ok(total / episodes as f64)
}

/// Mean episode length of the uniform random policy over the same
/// held-out seeds; the baseline oracle for training sanity.
pub fn random_policy_mean_length(episodes: u64, seed_base: u64) -> Result<f64> {
    let mut total = 0.0f64;
    for i in 0..episodes {
        let (len, _) = env::run_episode(seed_base + i, |_, rng| {
            rng.gen_range(0..env::NUM_ACTIONS as u32)
        })?;
        total += len as f64;
    }
    Ok(total / episodes as f64)
}
