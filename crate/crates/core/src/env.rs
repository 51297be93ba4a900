//! Deterministic pursuit environment emitting 27-float states.
//!
//! A pursuer chases the agent across a walled square arena; the agent
//! picks one of eight movement directions per step and is rewarded for
//! every step it stays uncaught. This stands in for a full game
//! emulator at matching state width and with a matching avoidance
//! objective, so training and benchmarks run at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Width of one environment state.
pub const STATE_DIM: usize = 27;
/// Eight movement directions at 45-degree spacing.
pub const NUM_ACTIONS: usize = 8;

/// All dynamics constants in one place.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics {
    /// Distance the agent moves per step.
    pub agent_speed: f32,
    /// Distance the pursuer moves per step; slower than the agent so
    /// evasion is possible.
    pub opponent_speed: f32,
    /// Episode ends with a capture penalty inside this distance.
    pub capture_radius: f32,
    /// Episode ends without penalty after this many steps.
    pub step_limit: u32,
    /// Reward per step survived.
    pub survive_reward: f32,
    /// Reward on capture.
    pub capture_reward: f32,
    /// Positions are clamped to `[-extent, extent]` per axis.
    pub arena_half_extent: f32,
}

pub const DYNAMICS: Dynamics = Dynamics {
    agent_speed: 0.06,
    opponent_speed: 0.035,
    capture_radius: 0.1,
    step_limit: 600,
    survive_reward: 1.0,
    capture_reward: -10.0,
    arena_half_extent: 1.0,
};

// State layout within the 27 floats.
const AGENT_POS: usize = 0; // 2
const AGENT_VEL: usize = 2; // 2
const OPP_POS: usize = 4; // 2
const OPP_VEL: usize = 6; // 2
const REL_OFFSET: usize = 8; // 2: opponent - agent
const TIMER: usize = 10; // 1: steps / step_limit
const NOISE: usize = 11; // 16 bounded noise channels
const NOISE_CHANNELS: usize = 16;

/// One environment state: 27 floats, all within `[-10, 10]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    values: [f32; STATE_DIM],
}

impl EnvState {
    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.values.to_vec()
    }

    pub fn agent_pos(&self) -> (f32, f32) {
        (self.values[AGENT_POS], self.values[AGENT_POS + 1])
    }

    pub fn opponent_pos(&self) -> (f32, f32) {
        (self.values[OPP_POS], self.values[OPP_POS + 1])
    }

    /// Steps taken so far in the episode.
    pub fn steps(&self) -> u32 {
        (self.values[TIMER] * DYNAMICS.step_limit as f32).round() as u32
    }

    fn distance(&self) -> f32 {
        let (ax, ay) = self.agent_pos();
        let (ox, oy) = self.opponent_pos();
        ((ax - ox) * (ax - ox) + (ay - oy) * (ay - oy)).sqrt()
    }
}

pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f32,
    pub terminal: bool,
}

/// Unit vector for each of the eight movement directions.
fn direction(action: u32) -> (f32, f32) {
    let angle = action as f32 * std::f32::consts::FRAC_PI_4;
    (angle.cos(), angle.sin())
}

fn clamp_arena(v: f32) -> f32 {
    v.clamp(-DYNAMICS.arena_half_extent, DYNAMICS.arena_half_extent)
}

/// Deterministic initial state for a seed: agent at the origin,
/// opponent placed at a seed-dependent angle and distance.
pub fn reset(seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = [0.0f32; STATE_DIM];
    let angle = rng.gen_range(0.0..std::f32::consts::TAU);
    let dist = rng.gen_range(0.5..0.9);
    values[OPP_POS] = clamp_arena(angle.cos() * dist);
    values[OPP_POS + 1] = clamp_arena(angle.sin() * dist);
    values[REL_OFFSET] = values[OPP_POS];
    values[REL_OFFSET + 1] = values[OPP_POS + 1];
    for i in 0..NOISE_CHANNELS {
        values[NOISE + i] = rng.gen_range(-1.0..1.0);
    }
    EnvState { values }
}

/// Advance one step: the agent moves along `action`'s direction, the
/// pursuer moves toward the agent, both clamped to the arena. Terminal
/// on capture (with penalty) or at the step cap.
pub fn step(state: &EnvState, action: u32, rng: &mut impl Rng) -> Result<StepResult> {
    if action as usize >= NUM_ACTIONS {
        return Err(Error::InvalidArgument(format!(
            "action {action} out of range for {NUM_ACTIONS} actions"
        )));
    }
    let d = DYNAMICS;
    let mut values = state.values;

    let (dx, dy) = direction(action);
    let avx = dx * d.agent_speed;
    let avy = dy * d.agent_speed;
    values[AGENT_POS] = clamp_arena(values[AGENT_POS] + avx);
    values[AGENT_POS + 1] = clamp_arena(values[AGENT_POS + 1] + avy);
    values[AGENT_VEL] = avx;
    values[AGENT_VEL + 1] = avy;

    let tx = values[AGENT_POS] - values[OPP_POS];
    let ty = values[AGENT_POS + 1] - values[OPP_POS + 1];
    let norm = (tx * tx + ty * ty).sqrt();
    let (ovx, ovy) = if norm > 1e-6 {
        (tx / norm * d.opponent_speed, ty / norm * d.opponent_speed)
    } else {
        (0.0, 0.0)
    };
    values[OPP_POS] = clamp_arena(values[OPP_POS] + ovx);
    values[OPP_POS + 1] = clamp_arena(values[OPP_POS + 1] + ovy);
    values[OPP_VEL] = ovx;
    values[OPP_VEL + 1] = ovy;

    values[REL_OFFSET] = values[OPP_POS] - values[AGENT_POS];
    values[REL_OFFSET + 1] = values[OPP_POS + 1] - values[AGENT_POS + 1];

    let steps = state.steps() + 1;
    values[TIMER] = steps as f32 / d.step_limit as f32;
    for i in 0..NOISE_CHANNELS {
        values[NOISE + i] = rng.gen_range(-1.0..1.0);
    }

    let next_state = EnvState { values };
    let captured = next_state.distance() < d.capture_radius;
    let capped = steps >= d.step_limit;
    let reward = if captured {
        d.capture_reward
    } else {
        d.survive_reward
    };
    Ok(StepResult {
        next_state,
        reward,
        terminal: captured || capped,
    })
}

/// Simple evasion baseline: orbit a ring around the arena center,
/// running along whichever tangent leads away from the pursuer, with a
/// radial correction toward the ring. A faster evader on a ring cannot
/// be cornered, so this policy routinely reaches the step cap.
pub fn evade_action(state: &EnvState) -> u32 {
    const RING_RADIUS: f32 = 0.75;
    let (ax, ay) = state.agent_pos();
    let (ox, oy) = state.opponent_pos();
    let r = (ax * ax + ay * ay).sqrt();
    let (rx, ry) = if r > 1e-3 { (ax / r, ay / r) } else { (1.0, 0.0) };
    let mut away_x = ax - ox;
    let mut away_y = ay - oy;
    let away_norm = (away_x * away_x + away_y * away_y).sqrt();
    if away_norm > 1e-6 {
        away_x /= away_norm;
        away_y /= away_norm;
    }
    // Counter-clockwise and clockwise tangents; keep the one pointing
    // away from the pursuer (ties go counter-clockwise).
    let (tx, ty) = if -ry * away_x + rx * away_y >= 0.0 {
        (-ry, rx)
    } else {
        (ry, -rx)
    };
    let radial_gain = 1.2 * (RING_RADIUS - r);
    let desired_x = tx + radial_gain * rx;
    let desired_y = ty + radial_gain * ry;
    let mut best = 0u32;
    let mut best_dot = f32::NEG_INFINITY;
    for a in 0..NUM_ACTIONS as u32 {
        let (dx, dy) = direction(a);
        let dot = dx * desired_x + dy * desired_y;
        if dot > best_dot {
            best_dot = dot;
            best = a;
        }
    }
    best
}

/// Run one episode under a policy; returns (length, total reward).
pub fn run_episode(
    seed: u64,
    mut policy: impl FnMut(&EnvState, &mut ChaCha8Rng) -> u32,
) -> Result<(u32, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut state = reset(seed);
    let mut total = 0.0f64;
    let mut len = 0u32;
    loop {
        let action = policy(&state, &mut rng);
        let result = step(&state, action, &mut rng)?;
        total += result.reward as f64;
        len += 1;
        if result.terminal {
            return Ok((len, total));
        }
        state = result.next_state;
    }
}
