//! Self-check suite behind the CLI `verify` subcommand: the invariants
//! that make the byte-accounting claims trustworthy, runnable on any
//! checkout in under a minute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench_add, bench_train, BenchParams, TrainBenchSpec};
use crate::device::{CostModel, Device};
use crate::dueling::{
    forward, forward_detailed, select_q, td_loss_and_grads, DuelingParams, TrainerConfig,
};
use crate::experience::{pack_experience, unpack_batch, unpack_experience, Experience, RowLayout};
use crate::mat::Mat;
use crate::pipeline::ReplayMode;
use crate::replay::{
    duplicate_probability_analytic, duplicate_probability_monte_carlo, ReplayBuffer, ReplayConfig,
};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }
}

/// Run every check with the given seed; failures do not abort the rest.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        check_roundtrip(seed),
        check_batch_unpack(seed),
        check_device_oracle(seed),
        check_transfer_accounting(seed),
        check_cost_monotonicity(),
        check_fifo_oracle(seed),
        check_staged_invisible(seed),
        check_sampling_uniform(seed),
        check_duplicate_probability(seed),
        check_combine_identity(seed),
        check_gather_equivalence(seed),
        check_gradient(seed),
        check_target_freeze(seed),
        check_add_curve(seed),
        check_speedup_trend(seed),
        check_env_determinism(seed),
    ]
}

fn random_experience(rng: &mut ChaCha8Rng, d: usize) -> Experience {
    Experience {
        old_state: (0..d).map(|_| rng.gen_range(-50.0..50.0)).collect(),
        action: rng.gen_range(0..1 << 20),
        reward: rng.gen_range(-10.0..10.0),
        new_state: (0..d).map(|_| rng.gen_range(-50.0..50.0)).collect(),
        terminal: rng.gen_bool(0.25),
    }
}

fn check_roundtrip(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0u32;
    for _ in 0..2000 {
        let d = rng.gen_range(1..=64);
        let layout = RowLayout::new(d).unwrap();
        let exp = random_experience(&mut rng, d);
        let row = pack_experience(&exp, &layout).unwrap();
        let back = unpack_experience(&row, &layout).unwrap();
        if back != exp {
            return Check::new(
                "pack/unpack roundtrip",
                false,
                format!("mismatch at D={d}: {exp:?}"),
            );
        }
        cases += 1;
    }
    Check::new(
        "pack/unpack roundtrip",
        true,
        format!("{cases} random experiences, D in [1,64], bit-exact"),
    )
}

fn check_batch_unpack(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for _ in 0..200 {
        let d = rng.gen_range(1..=8);
        let b = rng.gen_range(1..=32);
        let layout = RowLayout::new(d).unwrap();
        let exps: Vec<Experience> = (0..b).map(|_| random_experience(&mut rng, d)).collect();
        let rows = crate::experience::pack_rows(&exps, &layout).unwrap();
        let batch = unpack_batch(&rows, &layout).unwrap();
        for (i, exp) in exps.iter().enumerate() {
            if batch.old_states.row(i) != exp.old_state.as_slice()
                || batch.new_states.row(i) != exp.new_state.as_slice()
                || batch.actions[i] != exp.action
                || batch.rewards[i] != exp.reward
                || batch.terminals[i] != exp.terminal
            {
                return Check::new(
                    "batch unpack equals per-row unpack",
                    false,
                    format!("row {i} of B={b}, D={d} diverged"),
                );
            }
        }
    }
    Check::new(
        "batch unpack equals per-row unpack",
        true,
        "200 random batches".into(),
    )
}

fn check_device_oracle(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    for program in 0..50 {
        let rows = rng.gen_range(1..=100);
        let cols = rng.gen_range(1..=6);
        let device = Device::simulated(CostModel::default());
        let mut buf = device.allocate(rows, cols).unwrap();
        let mut oracle = vec![vec![0.0f32; cols]; rows];
        for _ in 0..rng.gen_range(1..=500) {
            if rng.gen_bool(0.5) {
                let k = rng.gen_range(0..=4usize);
                let indices: Vec<usize> = (0..k).map(|_| rng.gen_range(0..rows)).collect();
                let mut data = Mat::zeros(k, cols);
                for v in data.as_mut_slice() {
                    *v = rng.gen_range(-5.0..5.0);
                }
                buf.scatter_rows(&indices, &data).unwrap();
                for (r, &i) in indices.iter().enumerate() {
                    oracle[i].copy_from_slice(data.row(r));
                }
            } else {
                let k = rng.gen_range(0..=6usize);
                let indices: Vec<usize> = (0..k).map(|_| rng.gen_range(0..rows)).collect();
                let got = buf.gather_rows(&indices).unwrap();
                for (r, &i) in indices.iter().enumerate() {
                    if got.row(r) != oracle[i].as_slice() {
                        return Check::new(
                            "scatter/gather vs array oracle",
                            false,
                            format!("program {program}: row {i} diverged"),
                        );
                    }
                }
            }
        }
    }
    Check::new(
        "scatter/gather vs array oracle",
        true,
        "50 random interleavings".into(),
    )
}

fn check_transfer_accounting(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let device = Device::simulated(CostModel::default());
    let cols = 9;
    let mut buf = device.allocate(64, cols).unwrap();
    let mut expected_bytes = 0u64;
    let mut expected_transfers = 0u64;
    for _ in 0..100 {
        let k = rng.gen_range(0..=8usize);
        let indices: Vec<usize> = (0..k).map(|_| rng.gen_range(0..64)).collect();
        buf.scatter_rows(&indices, &Mat::zeros(k, cols)).unwrap();
        if k > 0 {
            expected_bytes += (k * cols * 4) as u64;
            expected_transfers += 1;
        }
    }
    let stats = device.stats();
    let ok = stats.bytes_to_device == expected_bytes
        && stats.transfers_to_device == expected_transfers;
    Check::new(
        "transfer accounting identity",
        ok,
        format!(
            "bytes {} (want {expected_bytes}), transfers {} (want {expected_transfers})",
            stats.bytes_to_device, stats.transfers_to_device
        ),
    )
}

fn check_cost_monotonicity() -> Check {
    let cost = CostModel::default();
    let total = 4_000_000u64;
    let mut last = f64::INFINITY;
    for n in [1000u64, 100, 10, 1] {
        let t = n as f64 * cost.transfer_seconds(total / n);
        if t >= last {
            return Check::new(
                "cost-model monotonicity",
                false,
                format!("time did not decrease at {n} transfers"),
            );
        }
        last = t;
    }
    Check::new(
        "cost-model monotonicity",
        true,
        "fixed bytes, fewer transfers always faster".into(),
    )
}

fn check_fifo_oracle(seed: u64) -> Check {
    let layout = RowLayout::new(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    for program in 0..500 {
        let update_size = rng.gen_range(1..=10usize);
        let capacity = update_size * rng.gen_range(1..=10usize);
        let device = Device::simulated(CostModel::default());
        let mut buf =
            ReplayBuffer::new(ReplayConfig::new(capacity, update_size, layout), &device).unwrap();
        let mut oracle: Vec<f32> = Vec::new();
        let mut stamp = 0.0f32;
        for _ in 0..rng.gen_range(1..=200usize) {
            if rng.gen_bool(0.9) {
                stamp += 1.0;
                buf.add(Experience {
                    old_state: vec![stamp],
                    action: 0,
                    reward: stamp,
                    new_state: vec![stamp],
                    terminal: false,
                })
                .unwrap();
            } else {
                buf.flush().unwrap();
            }
            // Oracle mirrors flush boundaries: device-visible stamps.
            let visible = buf.size();
            let total = stamp as usize - buf.staged();
            oracle = ((total.saturating_sub(capacity))..total)
                .map(|i| (i + 1) as f32)
                .collect();
            if oracle.len() != visible {
                return Check::new(
                    "FIFO ring vs drop-oldest oracle",
                    false,
                    format!("program {program}: size {visible} vs oracle {}", oracle.len()),
                );
            }
        }
        let rows = buf.visible_rows().unwrap();
        let mut got: Vec<f32> = (0..buf.size()).map(|i| rows.get(i, 0)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = oracle;
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if got != want {
            return Check::new(
                "FIFO ring vs drop-oldest oracle",
                false,
                format!("program {program}: visible multiset diverged"),
            );
        }
    }
    Check::new(
        "FIFO ring vs drop-oldest oracle",
        true,
        "500 random add/flush programs, capacity <= 100".into(),
    )
}

fn check_staged_invisible(seed: u64) -> Check {
    let layout = RowLayout::new(1).unwrap();
    let device = Device::simulated(CostModel::default());
    let mut cfg = ReplayConfig::new(32, 8, layout);
    cfg.min_sample_size = 8;
    let mut buf = ReplayBuffer::new(cfg, &device).unwrap();
    for i in 0..8 {
        buf.add(Experience {
            old_state: vec![i as f32],
            action: 0,
            reward: 0.0,
            new_state: vec![0.0],
            terminal: false,
        })
        .unwrap();
    }
    for _ in 0..5 {
        buf.add(Experience {
            old_state: vec![999.0],
            action: 0,
            reward: 0.0,
            new_state: vec![0.0],
            terminal: false,
        })
        .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
    for _ in 0..300 {
        let batch = buf.sample(16, &mut rng).unwrap();
        for i in 0..batch.len() {
            if batch.old_states.row(i)[0] == 999.0 {
                return Check::new(
                    "staged experiences invisible to sampling",
                    false,
                    "sampled an unflushed experience".into(),
                );
            }
        }
    }
    Check::new(
        "staged experiences invisible to sampling",
        true,
        "4800 draws, none staged".into(),
    )
}

fn check_sampling_uniform(seed: u64) -> Check {
    let layout = RowLayout::new(1).unwrap();
    let device = Device::simulated(CostModel::default());
    let mut cfg = ReplayConfig::new(10, 10, layout);
    cfg.min_sample_size = 10;
    let mut buf = ReplayBuffer::new(cfg, &device).unwrap();
    for i in 0..10 {
        buf.add(Experience {
            old_state: vec![i as f32],
            action: 0,
            reward: 0.0,
            new_state: vec![0.0],
            terminal: false,
        })
        .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
    let mut counts = [0u64; 10];
    let trials = 100_000;
    for _ in 0..trials {
        counts[buf.sample_indices(1, &mut rng).unwrap()[0]] += 1;
    }
    let expected = trials as f64 / 10.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    // 99% critical value, 9 degrees of freedom.
    Check::new(
        "uniform sampling marginals",
        chi2 < 21.666,
        format!("chi-square {chi2:.2} vs 21.666 (df=9, 99%)"),
    )
}

fn check_duplicate_probability(seed: u64) -> Check {
    let analytic = duplicate_probability_analytic(32, 1_000_000);
    let mc = duplicate_probability_monte_carlo(32, 1_000_000, 1_000_000, seed ^ 7);
    let ok = (analytic - 4.96e-4).abs() < 1e-6 && (3.5e-4..=6.5e-4).contains(&mc);
    Check::new(
        "duplicate-sample probability (k=32, N=1e6)",
        ok,
        format!("analytic {analytic:.3e}, monte carlo {mc:.3e}, bounds [3.5e-4, 6.5e-4]"),
    )
}

fn check_combine_identity(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 8);
    let params = DuelingParams::<f32>::new(27, 8, seed ^ 9);
    let mut states = Mat::zeros(1000, 27);
    for v in states.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let (v, _, q) = forward_detailed(&params, &states).unwrap();
    let mut worst = 0.0f32;
    for i in 0..states.rows() {
        let sum: f32 = q.row(i).iter().map(|&qa| qa - v[i]).sum();
        let scale: f32 = q.row(i).iter().map(|qa| qa.abs()).sum::<f32>().max(1.0);
        worst = worst.max((sum / scale).abs());
    }
    Check::new(
        "combine identity sum_a(Q - V) = 0",
        worst < 1e-5,
        format!("worst relative residual {worst:.2e} over 1000 states"),
    )
}

fn check_gather_equivalence(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 10);
    for _ in 0..1000 {
        let b = rng.gen_range(1..=32);
        let a = rng.gen_range(1..=12);
        let mut q = Mat::zeros(b, a);
        for v in q.as_mut_slice() {
            *v = rng.gen_range(-10.0f32..10.0);
        }
        let actions: Vec<u32> = (0..b).map(|_| rng.gen_range(0..a as u32)).collect();
        let got = select_q(&q, &actions).unwrap();
        for i in 0..b {
            if got[i] != q.get(i, actions[i] as usize) {
                return Check::new(
                    "flattened gather equals naive indexing",
                    false,
                    format!("row {i} diverged"),
                );
            }
        }
    }
    Check::new(
        "flattened gather equals naive indexing",
        true,
        "1000 random batches".into(),
    )
}

fn check_gradient(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 11);
    let params = DuelingParams::<f64>::with_hidden_sizes(3, 2, 8, 12, seed ^ 12);
    let b = 4usize;
    let mut states = Mat::zeros(b, 3);
    for v in states.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let actions: Vec<u32> = (0..b).map(|_| rng.gen_range(0..2)).collect();
    let targets: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, grads) = td_loss_and_grads(&params, &states, &actions, &targets).unwrap();

    let loss_of = |p: &DuelingParams<f64>| -> f64 {
        let q = forward(p, &states).unwrap();
        let sel = select_q(&q, &actions).unwrap();
        0.5 * sel
            .iter()
            .zip(&targets)
            .map(|(s, t)| (s - t) * (s - t))
            .sum::<f64>()
            / b as f64
    };

    let flat = grads.flatten();
    let eps = 1e-6;
    let mut max_rel = 0.0f64;
    for idx in 0..flat.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.param_mut(idx) += eps;
        *minus.param_mut(idx) -= eps;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
        let rel = (fd - flat[idx]).abs() / (fd.abs() + flat[idx].abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Check::new(
        "analytic gradient vs finite differences (f64)",
        max_rel < 1e-4,
        format!("max relative error {max_rel:.2e} over {} parameters", flat.len()),
    )
}

fn check_target_freeze(seed: u64) -> Check {
    use crate::dueling::{train_step, TrainerState};
    let params = DuelingParams::<f32>::with_hidden_sizes(4, 3, 8, 8, seed ^ 13);
    let mut state = TrainerState::new(params);
    let cfg = TrainerConfig {
        alpha: 1e-3,
        gamma: 0.9,
        target_sync_period: 7,
        batch_size: 2,
        num_actions: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 14);
    let mut frozen = state.target.clone();
    for step in 1..=21u64 {
        let mut old_states = Mat::zeros(2, 4);
        let mut new_states = Mat::zeros(2, 4);
        for v in old_states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in new_states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let batch = crate::experience::UnpackedBatch {
            old_states,
            new_states,
            actions: vec![rng.gen_range(0..3), rng.gen_range(0..3)],
            rewards: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            terminals: vec![false, rng.gen_bool(0.3)],
        };
        train_step(&mut state, &batch, &cfg).unwrap();
        if step % 7 == 0 {
            if !state.target.bit_equal(&state.online) {
                return Check::new(
                    "target fixing",
                    false,
                    format!("target not synced at step {step}"),
                );
            }
            frozen = state.target.clone();
        } else if !state.target.bit_equal(&frozen) {
            return Check::new(
                "target fixing",
                false,
                format!("target drifted between syncs at step {step}"),
            );
        }
    }
    Check::new(
        "target fixing",
        true,
        "synced exactly at period boundaries, frozen elsewhere".into(),
    )
}

fn check_add_curve(seed: u64) -> Check {
    let p = BenchParams {
        seed,
        capacity: 10_000,
        ..BenchParams::default()
    };
    match bench_add(&p, &[10, 100, 500, 2000], 10_000) {
        Ok(rows) => {
            let device: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == "device-replay")
                .map(|r| r.value)
                .collect();
            let decreasing = device.windows(2).all(|w| w[1] < w[0]);
            Check::new(
                "per-add cost decreasing in update size",
                decreasing,
                format!("{device:?} us/add over U = [10, 100, 500, 2000]"),
            )
        }
        Err(e) => Check::new("per-add cost decreasing in update size", false, e.to_string()),
    }
}

fn check_speedup_trend(seed: u64) -> Check {
    let p = BenchParams {
        seed,
        capacity: 4000,
        min_sample_size: 2000,
        ..BenchParams::default()
    };
    let spec = TrainBenchSpec {
        n_steps: 5,
        adds_per_step: 2,
        update_size: 2000,
        trainer: TrainerConfig::default(),
    };
    match bench_train(&p, &spec, &[16, 32, 64, 128], &[ReplayMode::Host, ReplayMode::Device]) {
        Ok(report) => {
            let ok = report.speedups.windows(2).all(|w| w[1].1 >= w[0].1)
                && report.speedups.iter().all(|(_, s)| *s > 0.0);
            Check::new(
                "speedup non-decreasing in batch size",
                ok,
                format!("{:?}", report.speedups),
            )
        }
        Err(e) => Check::new("speedup non-decreasing in batch size", false, e.to_string()),
    }
}

fn check_env_determinism(seed: u64) -> Check {
    let run = |s: u64| crate::env::run_episode(s, |st, _| crate::env::evade_action(st)).unwrap();
    let (len_a, reward_a) = run(seed);
    let (len_b, reward_b) = run(seed);
    Check::new(
        "environment determinism",
        len_a == len_b && reward_a == reward_b,
        format!("episode length {len_a}, total reward {reward_a}"),
    )
}
