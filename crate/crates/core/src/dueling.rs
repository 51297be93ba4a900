//! Dueling Q-network with target fixing.
//!
//! The network shares one 128-unit hidden layer, branches into 512-unit
//! value and advantage streams, and combines them per state as
//! `Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a')`. Action values for a batch
//! are selected from the flattened row-major Q matrix through a constant
//! enumerate mask, and the train step consumes an on-device sample, so
//! nothing is fed from the host.
//!
//! Everything is generic over `f32`/`f64`: training runs in 32-bit, the
//! 64-bit instantiation exists for finite-difference gradient checks.

use rand::distributions::uniform::SampleUniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experience::UnpackedBatch;
use crate::mat::Mat;

/// Units in the layer shared by both streams.
pub const SHARED_UNITS: usize = 128;
/// Units in each stream's hidden layer.
pub const STREAM_UNITS: usize = 512;

/// Float type the network runs in.
pub trait Scalar:
    num_traits::Float + SampleUniform + std::iter::Sum + std::fmt::Debug + Default + 'static
{
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Fully-connected layer; `w` is `in_dim x out_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Mat<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = T::from_f64((6.0 / (in_dim + out_dim) as f64).sqrt());
        let mut w = Mat::zeros(in_dim, out_dim);
        for v in w.as_mut_slice() {
            *v = rng.gen_range(-limit..=limit);
        }
        Dense {
            w,
            b: vec![T::zero(); out_dim],
        }
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            w: Mat::zeros(in_dim, out_dim),
            b: vec![T::zero(); out_dim],
        }
    }

    fn out_dim(&self) -> usize {
        self.b.len()
    }

    /// `x (B x in) . w (in x out) + b`, row-major accumulation.
    fn forward(&self, x: &Mat<T>) -> Mat<T> {
        let (b_rows, in_dim, out_dim) = (x.rows(), self.w.rows(), self.out_dim());
        debug_assert_eq!(x.cols(), in_dim);
        let mut out = Mat::zeros(b_rows, out_dim);
        for r in 0..b_rows {
            let x_row = x.row(r);
            let out_row = out.row_mut(r);
            out_row.copy_from_slice(&self.b);
            for (i, &xv) in x_row.iter().enumerate() {
                let w_row = self.w.row(i);
                for (o, acc) in out_row.iter_mut().enumerate() {
                    *acc = *acc + xv * w_row[o];
                }
            }
        }
        out
    }
}

fn relu_inplace<T: Scalar>(m: &mut Mat<T>) {
    for v in m.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn check_finite<T: Scalar>(m: &Mat<T>, location: &'static str) -> Result<()> {
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { location });
    }
    Ok(())
}

/// Weights of the dueling network: shared layer plus value and
/// advantage streams, each with a hidden layer and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingParams<T> {
    pub shared: Dense<T>,
    pub value_hidden: Dense<T>,
    pub value_head: Dense<T>,
    pub adv_hidden: Dense<T>,
    pub adv_head: Dense<T>,
}

impl<T: Scalar> DuelingParams<T> {
    /// Seeded Glorot-uniform initialization of the standard
    /// 128-shared / 512-stream architecture.
    pub fn new(state_dim: usize, num_actions: usize, seed: u64) -> Self {
        Self::with_hidden_sizes(state_dim, num_actions, SHARED_UNITS, STREAM_UNITS, seed)
    }

    /// Same wiring with custom layer widths; small widths keep
    /// exhaustive gradient checks and long sync-logic runs cheap.
    pub fn with_hidden_sizes(
        state_dim: usize,
        num_actions: usize,
        shared_units: usize,
        stream_units: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DuelingParams {
            shared: Dense::glorot(state_dim, shared_units, &mut rng),
            value_hidden: Dense::glorot(shared_units, stream_units, &mut rng),
            value_head: Dense::glorot(stream_units, 1, &mut rng),
            adv_hidden: Dense::glorot(shared_units, stream_units, &mut rng),
            adv_head: Dense::glorot(stream_units, num_actions, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DuelingParams {
            shared: Dense::zeros(self.shared.w.rows(), self.shared.out_dim()),
            value_hidden: Dense::zeros(self.value_hidden.w.rows(), self.value_hidden.out_dim()),
            value_head: Dense::zeros(self.value_head.w.rows(), self.value_head.out_dim()),
            adv_hidden: Dense::zeros(self.adv_hidden.w.rows(), self.adv_hidden.out_dim()),
            adv_head: Dense::zeros(self.adv_head.w.rows(), self.adv_head.out_dim()),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.shared.w.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.adv_head.out_dim()
    }

    /// `p += scale * other`, elementwise over every layer.
    pub fn scaled_add(&mut self, other: &Self, scale: T) {
        for (layer, o_layer) in self.layers_mut().into_iter().zip(other.layers()) {
            for (v, &ov) in layer.0.as_mut_slice().iter_mut().zip(o_layer.0.as_slice()) {
                *v = *v + scale * ov;
            }
            for (v, &ov) in layer.1.iter_mut().zip(o_layer.1) {
                *v = *v + scale * ov;
            }
        }
    }

    fn layers(&self) -> [(&Mat<T>, &[T]); 5] {
        [
            (&self.shared.w, &self.shared.b),
            (&self.value_hidden.w, &self.value_hidden.b),
            (&self.value_head.w, &self.value_head.b),
            (&self.adv_hidden.w, &self.adv_hidden.b),
            (&self.adv_head.w, &self.adv_head.b),
        ]
    }

    fn layers_mut(&mut self) -> [(&mut Mat<T>, &mut Vec<T>); 5] {
        [
            (&mut self.shared.w, &mut self.shared.b),
            (&mut self.value_hidden.w, &mut self.value_hidden.b),
            (&mut self.value_head.w, &mut self.value_head.b),
            (&mut self.adv_hidden.w, &mut self.adv_hidden.b),
            (&mut self.adv_head.w, &mut self.adv_head.b),
        ]
    }

    /// Named weight arrays in checkpoint order. Biases are `1 x n`.
    pub fn named_arrays(&self) -> Vec<(&'static str, usize, usize, &[T])> {
        let names = [
            ("shared.w", "shared.b"),
            ("value_hidden.w", "value_hidden.b"),
            ("value_head.w", "value_head.b"),
            ("adv_hidden.w", "adv_hidden.b"),
            ("adv_head.w", "adv_head.b"),
        ];
        let mut out = Vec::with_capacity(10);
        for ((m, b), (wn, bn)) in self.layers().into_iter().zip(names) {
            out.push((wn, m.rows(), m.cols(), m.as_slice()));
            out.push((bn, 1, b.len(), b));
        }
        out
    }

    /// All parameters flattened in checkpoint order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (_, _, _, data) in self.named_arrays() {
            out.extend_from_slice(data);
        }
        out
    }

    /// Mutable access to the idx-th parameter in [`flatten`](Self::flatten)
    /// order; finite-difference checks perturb through this.
    pub fn param_mut(&mut self, idx: usize) -> &mut T {
        let mut offset = 0usize;
        for (m, b) in self.layers_mut() {
            let wlen = m.as_slice().len();
            if idx < offset + wlen {
                return &mut m.as_mut_slice()[idx - offset];
            }
            offset += wlen;
            if idx < offset + b.len() {
                return &mut b[idx - offset];
            }
            offset += b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// Parameter count and per-block index ranges in flatten order.
    pub fn block_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let mut out = Vec::with_capacity(10);
        let mut offset = 0usize;
        for (name, rows, cols, _) in self.named_arrays() {
            let len = rows * cols;
            out.push((name, offset..offset + len));
            offset += len;
        }
        out
    }

    /// Check stream wiring consistency and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        let shared_units = self.shared.out_dim();
        let stream_units = self.value_hidden.out_dim();
        let wired = self.shared.w.cols() == shared_units
            && self.shared.b.len() == shared_units
            && self.value_hidden.w.rows() == shared_units
            && self.adv_hidden.w.rows() == shared_units
            && self.adv_hidden.out_dim() == stream_units
            && self.value_head.w.rows() == stream_units
            && self.value_head.out_dim() == 1
            && self.adv_head.w.rows() == stream_units
            && self.adv_head.out_dim() >= 1;
        if !wired {
            return Err(Error::InvalidConfig(
                "dueling network layer shapes are inconsistent".into(),
            ));
        }
        for (name, _, _, data) in self.named_arrays() {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptRow(format!(
                    "non-finite value in parameter array {name}"
                )));
            }
        }
        Ok(())
    }

    /// Exact (bitwise) equality of every parameter.
    pub fn bit_equal(&self, other: &Self) -> bool {
        let a = self.flatten();
        let b = other.flatten();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
    }
}

struct ForwardCache<T> {
    h: Mat<T>,
    vh: Mat<T>,
    ah: Mat<T>,
    v: Vec<T>,
    adv: Mat<T>,
    q: Mat<T>,
}

fn forward_cached<T: Scalar>(params: &DuelingParams<T>, states: &Mat<T>) -> Result<ForwardCache<T>> {
    if states.cols() != params.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.state_dim(),
            actual: states.cols(),
        });
    }
    let mut h = params.shared.forward(states);
    relu_inplace(&mut h);
    check_finite(&h, "shared layer")?;

    let mut vh = params.value_hidden.forward(&h);
    relu_inplace(&mut vh);
    check_finite(&vh, "value-stream hidden layer")?;
    let v_mat = params.value_head.forward(&vh);
    check_finite(&v_mat, "value head")?;
    let v: Vec<T> = (0..v_mat.rows()).map(|i| v_mat.get(i, 0)).collect();

    let mut ah = params.adv_hidden.forward(&h);
    relu_inplace(&mut ah);
    check_finite(&ah, "advantage-stream hidden layer")?;
    let adv = params.adv_head.forward(&ah);
    check_finite(&adv, "advantage head")?;

    let actions = adv.cols();
    let inv_a = T::one() / T::from_f64(actions as f64);
    let mut q = Mat::zeros(adv.rows(), actions);
    for i in 0..adv.rows() {
        let row = adv.row(i);
        let mean: T = row.iter().copied().sum::<T>() * inv_a;
        let q_row = q.row_mut(i);
        for a in 0..actions {
            q_row[a] = v[i] + row[a] - mean;
        }
    }
    check_finite(&q, "q combine")?;
    Ok(ForwardCache { h, vh, ah, v, adv, q })
}

/// Batched forward pass: one Q vector per input state.
pub fn forward<T: Scalar>(params: &DuelingParams<T>, states: &Mat<T>) -> Result<Mat<T>> {
    forward_cached(params, states).map(|c| c.q)
}

/// Forward pass exposing the stream outputs: `(V, A, Q)`.
pub fn forward_detailed<T: Scalar>(
    params: &DuelingParams<T>,
    states: &Mat<T>,
) -> Result<(Vec<T>, Mat<T>, Mat<T>)> {
    forward_cached(params, states).map(|c| (c.v, c.adv, c.q))
}

/// `result[i] = q[i, actions[i]]`, computed by flattening `q` row-major
/// and gathering at `enumerate_mask + actions` where
/// `enumerate_mask = [0, A, 2A, ...]` points at each row start.
pub fn select_q<T: Scalar>(q: &Mat<T>, actions: &[u32]) -> Result<Vec<T>> {
    if actions.len() != q.rows() {
        return Err(Error::DimensionMismatch {
            expected: q.rows(),
            actual: actions.len(),
        });
    }
    let num_actions = q.cols();
    for &a in actions {
        if a as usize >= num_actions {
            return Err(Error::InvalidArgument(format!(
                "action {a} out of range for {num_actions} actions"
            )));
        }
    }
    let flat = q.as_slice();
    Ok(actions
        .iter()
        .enumerate()
        .map(|(i, &a)| flat[i * num_actions + a as usize])
        .collect())
}

/// `target[i] = r[i] + gamma * (1 - terminal[i]) * max_a' next_q[i, a']`.
pub fn td_targets<T: Scalar>(
    rewards: &[f32],
    terminals: &[bool],
    next_q_target: &Mat<T>,
    gamma: f64,
) -> Vec<T> {
    let g = T::from_f64(gamma);
    (0..next_q_target.rows())
        .map(|i| {
            let r = T::from_f32(rewards[i]);
            if terminals[i] {
                r
            } else {
                let max_q = next_q_target
                    .row(i)
                    .iter()
                    .copied()
                    .fold(T::neg_infinity(), T::max);
                r + g * max_q
            }
        })
        .collect()
}

/// Mean squared TD error and the gradient of `1/2 * mean(err^2)` with
/// the targets held constant.
pub fn td_loss_and_grads<T: Scalar>(
    params: &DuelingParams<T>,
    states: &Mat<T>,
    actions: &[u32],
    targets: &[T],
) -> Result<(f64, DuelingParams<T>)> {
    let cache = forward_cached(params, states)?;
    let q_sel = select_q(&cache.q, actions)?;
    let batch = states.rows();
    let inv_b = T::one() / T::from_f64(batch as f64);
    let num_actions = params.num_actions();
    let inv_a = T::one() / T::from_f64(num_actions as f64);

    let mut loss = T::zero();
    // d(1/2 mean err^2)/dq_sel[i] = err_i / B.
    let dsel: Vec<T> = (0..batch)
        .map(|i| {
            let err = q_sel[i] - targets[i];
            loss = loss + err * err;
            err * inv_b
        })
        .collect();
    let loss = (loss * inv_b).as_f64();

    // Through the combine equation: dV[i] = sum_a dq[i,a] = dsel[i];
    // dA[i,a] = dq[i,a] - mean_a' dq[i,a'].
    let mut d_adv = Mat::zeros(batch, num_actions);
    for i in 0..batch {
        let row_mean = dsel[i] * inv_a;
        let row = d_adv.row_mut(i);
        for (a, v) in row.iter_mut().enumerate() {
            let dq = if a == actions[i] as usize {
                dsel[i]
            } else {
                T::zero()
            };
            *v = dq - row_mean;
        }
    }
    let dv = &dsel;

    let mut grads = params.zeros_like();
    let stream = params.value_head.w.rows();
    let shared_units = params.shared.out_dim();

    // Pre-relu gradients of both stream hidden layers.
    let mut dpre_vh = Mat::zeros(batch, stream);
    let mut dpre_ah = Mat::zeros(batch, stream);
    for i in 0..batch {
        let vh_row = cache.vh.row(i);
        let ah_row = cache.ah.row(i);
        let d_row = d_adv.row(i);
        let dpv = dpre_vh.row_mut(i);
        for k in 0..stream {
            if vh_row[k] > T::zero() {
                dpv[k] = dv[i] * params.value_head.w[(k, 0)];
            }
        }
        let dpa = dpre_ah.row_mut(i);
        for k in 0..stream {
            if ah_row[k] > T::zero() {
                let w_row = params.adv_head.w.row(k);
                let mut acc = T::zero();
                for a in 0..num_actions {
                    acc = acc + d_row[a] * w_row[a];
                }
                dpa[k] = acc;
            }
        }
    }

    // Head gradients.
    for i in 0..batch {
        let vh_row = cache.vh.row(i);
        for k in 0..stream {
            grads.value_head.w[(k, 0)] = grads.value_head.w[(k, 0)] + vh_row[k] * dv[i];
        }
        grads.value_head.b[0] = grads.value_head.b[0] + dv[i];

        let ah_row = cache.ah.row(i);
        let d_row = d_adv.row(i);
        for k in 0..stream {
            let g_row = grads.adv_head.w.row_mut(k);
            let a_act = ah_row[k];
            if a_act > T::zero() {
                for a in 0..num_actions {
                    g_row[a] = g_row[a] + a_act * d_row[a];
                }
            }
        }
        for a in 0..num_actions {
            grads.adv_head.b[a] = grads.adv_head.b[a] + d_row[a];
        }
    }

    // Stream hidden weight/bias gradients and the gradient reaching the
    // shared layer output.
    let mut dh = Mat::zeros(batch, shared_units);
    for i in 0..batch {
        let h_row = cache.h.row(i);
        let dpv = dpre_vh.row(i);
        let dpa = dpre_ah.row(i);
        for j in 0..shared_units {
            let act = h_row[j];
            if act > T::zero() {
                let gv = grads.value_hidden.w.row_mut(j);
                for k in 0..stream {
                    gv[k] = gv[k] + act * dpv[k];
                }
                let ga = grads.adv_hidden.w.row_mut(j);
                for k in 0..stream {
                    ga[k] = ga[k] + act * dpa[k];
                }
            }
        }
        for k in 0..stream {
            grads.value_hidden.b[k] = grads.value_hidden.b[k] + dpv[k];
            grads.adv_hidden.b[k] = grads.adv_hidden.b[k] + dpa[k];
        }
        let dh_row = dh.row_mut(i);
        for j in 0..shared_units {
            if h_row[j] > T::zero() {
                let wv_row = params.value_hidden.w.row(j);
                let wa_row = params.adv_hidden.w.row(j);
                let mut acc = T::zero();
                for k in 0..stream {
                    acc = acc + dpv[k] * wv_row[k] + dpa[k] * wa_row[k];
                }
                dh_row[j] = acc;
            }
        }
    }

    // Shared layer, through its relu.
    let state_dim = params.state_dim();
    for i in 0..batch {
        let x_row = states.row(i);
        let dh_row = dh.row(i);
        for d in 0..state_dim {
            let xv = x_row[d];
            let g_row = grads.shared.w.row_mut(d);
            for j in 0..shared_units {
                g_row[j] = g_row[j] + xv * dh_row[j];
            }
        }
        for j in 0..shared_units {
            grads.shared.b[j] = grads.shared.b[j] + dh_row[j];
        }
    }

    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy)]
pub struct TrainerConfig {
    /// Gradient-descent step size.
    pub alpha: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Train steps between target-network synchronizations.
    pub target_sync_period: u64,
    pub batch_size: usize,
    pub num_actions: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            gamma: 0.99,
            target_sync_period: 10_000,
            batch_size: 32,
            num_actions: 8,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if self.target_sync_period == 0 {
            return Err(Error::InvalidConfig("target_sync_period must be >= 1".into()));
        }
        if self.batch_size == 0 || self.num_actions == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and num_actions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Online network, frozen target copy, and the step counter that drives
/// target synchronization.
pub struct TrainerState<T> {
    pub online: DuelingParams<T>,
    pub target: DuelingParams<T>,
    step_count: u64,
}

impl<T: Scalar> TrainerState<T> {
    pub fn new(online: DuelingParams<T>) -> Self {
        let target = online.clone();
        Self {
            online,
            target,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Copy the online weights into the target network, bit-exact.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// One gradient-descent step on the mean squared TD error of a sampled
/// batch. The target network supplies the bootstrap values and is
/// touched only at sync boundaries. Returns the mean squared TD error;
/// on a non-finite loss the parameters are left unmodified.
pub fn train_step<T: Scalar>(
    state: &mut TrainerState<T>,
    batch: &UnpackedBatch,
    cfg: &TrainerConfig,
) -> Result<f64> {
    let old_states: Mat<T> = batch.old_states.map(T::from_f32);
    let new_states: Mat<T> = batch.new_states.map(T::from_f32);

    let next_q = forward(&state.target, &new_states)?;
    let targets = td_targets(&batch.rewards, &batch.terminals, &next_q, cfg.gamma);
    let (loss, grads) = td_loss_and_grads(&state.online, &old_states, &batch.actions, &targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { location: "td loss" });
    }
    state
        .online
        .scaled_add(&grads, T::from_f64(-cfg.alpha));
    state.step_count += 1;
    if state.step_count % cfg.target_sync_period == 0 {
        state.sync_target();
    }
    Ok(loss)
}

/// Behavior policy: with probability `epsilon` a uniform random action,
/// otherwise the greedy action (ties broken toward the lowest index).
pub fn act_epsilon_greedy<T: Scalar>(
    params: &DuelingParams<T>,
    state: &[T],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<u32> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [0, 1]"
        )));
    }
    let num_actions = params.num_actions();
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..num_actions as u32));
    }
    let states = Mat::from_rows(&[state]);
    let q = forward(params, &states)?;
    Ok(greedy_action(q.row(0)))
}

/// Argmax with ties broken toward the lowest action index.
pub fn greedy_action<T: Scalar>(q_row: &[T]) -> u32 {
    let mut best = 0usize;
    for (a, &v) in q_row.iter().enumerate().skip(1) {
        if v > q_row[best] {
            best = a;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Net whose heads output constants: all weights zero, head biases set.
    fn forced_head_net(v: f64, adv: &[f64]) -> DuelingParams<f64> {
        let mut p = DuelingParams::<f64>::with_hidden_sizes(2, adv.len(), 4, 4, 0).zeros_like();
        p.value_head.b[0] = v;
        p.adv_head.b.copy_from_slice(adv);
        p
    }

    #[test]
    fn combine_equation_forced_heads() {
        let p = forced_head_net(1.0, &[1.0, 2.0, 3.0]);
        let states = Mat::from_rows(&[&[0.5, -0.5]]);
        let q = forward(&p, &states).unwrap();
        assert_eq!(q.row(0), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn mean_q_equals_value() {
        let p = DuelingParams::<f64>::new(3, 4, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut states = Mat::zeros(8, 3);
        for v in states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (v, _, q) = forward_detailed(&p, &states).unwrap();
        for i in 0..8 {
            let mean: f64 = q.row(i).iter().sum::<f64>() / 4.0;
            assert!((mean - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_identity_sums_to_zero() {
        let p = DuelingParams::<f32>::new(5, 6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut states = Mat::zeros(100, 5);
        for v in states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (v, _, q) = forward_detailed(&p, &states).unwrap();
        for i in 0..states.rows() {
            let sum: f32 = q.row(i).iter().map(|&qa| qa - v[i]).sum();
            let scale: f32 = q.row(i).iter().map(|qa| qa.abs()).sum::<f32>().max(1.0);
            assert!(
                (sum / scale).abs() < 1e-5,
                "sum_a (Q - V) = {sum} not ~0 at row {i}"
            );
        }
    }

    /// Independent per-sample forward oracle with explicit loops and no
    /// shared code with the implementation.
    fn forward_oracle(p: &DuelingParams<f64>, state: &[f64]) -> Vec<f64> {
        let dense = |w: &Mat<f64>, b: &[f64], x: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; b.len()];
            for (o, out_v) in out.iter_mut().enumerate() {
                let mut acc = b[o];
                for (i, &xv) in x.iter().enumerate() {
                    acc += xv * w[(i, o)];
                }
                *out_v = acc;
            }
            out
        };
        let relu = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.max(0.0)).collect() };
        let h = relu(dense(&p.shared.w, &p.shared.b, state));
        let vh = relu(dense(&p.value_hidden.w, &p.value_hidden.b, &h));
        let v = dense(&p.value_head.w, &p.value_head.b, &vh)[0];
        let ah = relu(dense(&p.adv_hidden.w, &p.adv_hidden.b, &h));
        let adv = dense(&p.adv_head.w, &p.adv_head.b, &ah);
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        adv.iter().map(|a| v + a - mean).collect()
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let p = DuelingParams::<f64>::with_hidden_sizes(3, 2, 16, 24, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut states = Mat::zeros(10, 3);
        for v in states.as_mut_slice() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let q = forward(&p, &states).unwrap();
        for i in 0..10 {
            let want = forward_oracle(&p, states.row(i));
            for a in 0..2 {
                assert!(
                    (q.get(i, a) - want[a]).abs() < 1e-10,
                    "row {i} action {a}: {} vs {}",
                    q.get(i, a),
                    want[a]
                );
            }
        }
    }

    #[test]
    fn select_q_paper_example() {
        // q = [[a,b,c],[d,e,f]], actions [2,0]: mask [0,3], flat [2,3] -> [c,d].
        let q = Mat::from_rows(&[&[10.0, 11.0, 12.0], &[13.0, 14.0, 15.0]]);
        let sel = select_q(&q, &[2, 0]).unwrap();
        assert_eq!(sel, vec![12.0, 13.0]);
    }

    #[test]
    fn select_q_all_zero_actions_is_first_column() {
        let q = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(select_q(&q, &[0, 0, 0]).unwrap(), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn select_q_matches_indexing_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let b = rng.gen_range(1..=16);
            let a = rng.gen_range(1..=8);
            let mut q = Mat::zeros(b, a);
            for v in q.as_mut_slice() {
                *v = rng.gen_range(-10.0f64..10.0);
            }
            let actions: Vec<u32> = (0..b).map(|_| rng.gen_range(0..a as u32)).collect();
            let got = select_q(&q, &actions).unwrap();
            for i in 0..b {
                assert_eq!(got[i], q.get(i, actions[i] as usize));
            }
        }
    }

    #[test]
    fn select_q_rejects_out_of_range_action() {
        let q = Mat::from_rows(&[&[1.0f32, 2.0]]);
        assert!(matches!(
            select_q(&q, &[2]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn td_target_terminal_masks_bootstrap() {
        let next_q = Mat::from_rows(&[&[100.0f64, 200.0]]);
        let t = td_targets(&[2.0], &[true], &next_q, 0.99);
        assert_eq!(t, vec![2.0]);
    }

    #[test]
    fn td_target_zero_gamma_is_reward() {
        let next_q = Mat::from_rows(&[&[5.0f64, 7.0], &[1.0, -1.0]]);
        let t = td_targets(&[3.0, -2.0], &[false, false], &next_q, 0.0);
        assert_eq!(t, vec![3.0, -2.0]);
    }

    #[test]
    fn td_target_direct_evaluation() {
        let next_q = Mat::from_rows(&[&[0.5f64, 1.5]]);
        let t = td_targets(&[1.0], &[false], &next_q, 0.99);
        assert!((t[0] - 2.485).abs() < 1e-12);
    }

    fn tiny_batch(rng: &mut ChaCha8Rng, b: usize, d: usize, a: u32) -> UnpackedBatch {
        let mut old_states = Mat::zeros(b, d);
        let mut new_states = Mat::zeros(b, d);
        for v in old_states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in new_states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        UnpackedBatch {
            old_states,
            new_states,
            actions: (0..b).map(|_| rng.gen_range(0..a)).collect(),
            rewards: (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            terminals: (0..b).map(|_| rng.gen_bool(0.2)).collect(),
        }
    }

    #[test]
    fn train_step_decreases_td_error_on_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = DuelingParams::<f64>::with_hidden_sizes(3, 2, 16, 24, 7);
        let mut state = TrainerState::new(params);
        let batch = tiny_batch(&mut rng, 1, 3, 2);
        let cfg = TrainerConfig {
            alpha: 1e-3,
            gamma: 0.9,
            target_sync_period: 1000,
            batch_size: 1,
            num_actions: 2,
        };
        let loss_before = train_step(&mut state, &batch, &cfg).unwrap();
        // Recompute the TD error against the same (frozen) target.
        let loss_after = {
            let new_states = batch.new_states.map(f64::from_f32);
            let old_states = batch.old_states.map(f64::from_f32);
            let next_q = forward(&state.target, &new_states).unwrap();
            let targets = td_targets(&batch.rewards, &batch.terminals, &next_q, cfg.gamma);
            let q = forward(&state.online, &old_states).unwrap();
            let sel = select_q(&q, &batch.actions).unwrap();
            (sel[0] - targets[0]).powi(2)
        };
        assert!(
            loss_after < loss_before,
            "TD error did not decrease: {loss_before} -> {loss_after}"
        );
    }

    #[test]
    fn zero_alpha_leaves_params_unchanged_but_reports_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = DuelingParams::<f32>::with_hidden_sizes(3, 2, 8, 8, 9);
        let mut state = TrainerState::new(params.clone());
        let batch = tiny_batch(&mut rng, 4, 3, 2);
        let cfg = TrainerConfig {
            alpha: 0.0,
            gamma: 0.5,
            target_sync_period: 1000,
            batch_size: 4,
            num_actions: 2,
        };
        let loss = train_step(&mut state, &batch, &cfg).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(state.online.bit_equal(&params));
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = DuelingParams::<f64>::with_hidden_sizes(3, 2, 8, 12, 11);
        let batch = tiny_batch(&mut rng, 4, 3, 2);
        let states = batch.old_states.map(f64::from_f32);
        let targets: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = td_loss_and_grads(&params, &states, &batch.actions, &targets).unwrap();

        let loss_of = |p: &DuelingParams<f64>| -> f64 {
            let q = forward(p, &states).unwrap();
            let sel = select_q(&q, &batch.actions).unwrap();
            0.5 * sel
                .iter()
                .zip(&targets)
                .map(|(s, t)| (s - t) * (s - t))
                .sum::<f64>()
                / 4.0
        };

        let eps = 1e-6;
        let n_params = params.flatten().len();
        let analytic = grads.flatten();
        let mut max_rel = 0.0f64;
        for idx in 0..n_params {
            let mut plus = params.clone();
            let mut minus = params.clone();
            perturb(&mut plus, idx, eps);
            perturb(&mut minus, idx, -eps);
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let rel = (fd - analytic[idx]).abs() / (fd.abs() + analytic[idx].abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    fn perturb(p: &mut DuelingParams<f64>, idx: usize, delta: f64) {
        *p.param_mut(idx) += delta;
    }

    #[test]
    fn sync_makes_target_bit_equal() {
        let params = DuelingParams::<f32>::new(4, 3, 13);
        let mut state = TrainerState::new(params);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = TrainerConfig {
            alpha: 1e-3,
            gamma: 0.9,
            target_sync_period: 5,
            batch_size: 2,
            num_actions: 3,
        };
        let initial_target = state.target.clone();
        for step in 1..=16u64 {
            let batch = tiny_batch(&mut rng, 2, 4, 3);
            train_step(&mut state, &batch, &cfg).unwrap();
            assert_eq!(state.step_count(), step);
            if step % 5 == 0 {
                assert!(state.target.bit_equal(&state.online), "step {step}");
            } else {
                // Between syncs the target only ever equals the last synced copy.
                let last_sync = (step / 5) * 5;
                if last_sync == 0 {
                    assert!(state.target.bit_equal(&initial_target));
                }
                assert!(!state.target.bit_equal(&state.online), "step {step}");
            }
        }
    }

    #[test]
    fn forward_equal_after_sync() {
        let params = DuelingParams::<f32>::new(4, 3, 15);
        let mut state = TrainerState::new(params);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = TrainerConfig {
            alpha: 1e-3,
            ..TrainerConfig::default()
        };
        for _ in 0..3 {
            let batch = tiny_batch(&mut rng, 2, 4, 3);
            train_step(
                &mut state,
                &batch,
                &TrainerConfig {
                    num_actions: 3,
                    batch_size: 2,
                    ..cfg
                },
            )
            .unwrap();
        }
        state.sync_target();
        let mut states = Mat::zeros(5, 4);
        for v in states.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let q_online = forward(&state.online, &states).unwrap();
        let q_target = forward(&state.target, &states).unwrap();
        assert_eq!(q_online, q_target);
    }

    #[test]
    fn epsilon_one_is_uniform_over_actions() {
        let params = DuelingParams::<f32>::with_hidden_sizes(2, 8, 8, 8, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let state = [0.3f32, -0.7];
        let mut counts = [0u64; 8];
        let trials = 10_000;
        for _ in 0..trials {
            let a = act_epsilon_greedy(&params, &state, 1.0, &mut rng).unwrap();
            counts[a as usize] += 1;
        }
        let expected = trials as f64 / 8.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99% critical value for 7 degrees of freedom.
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }

    #[test]
    fn epsilon_zero_is_argmax() {
        let p = forced_head_net(0.0, &[1.0, 3.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = act_epsilon_greedy(&p, &[0.0, 0.0], 0.0, &mut rng).unwrap();
        assert_eq!(a, 1);
    }

    #[test]
    fn argmax_ties_break_low() {
        let p = forced_head_net(0.0, &[5.0, 5.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let a = act_epsilon_greedy(&p, &[0.0, 0.0], 0.0, &mut rng).unwrap();
        assert_eq!(a, 0);
        assert_eq!(greedy_action(&[5.0f64, 5.0]), 0);
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        let p = DuelingParams::<f32>::with_hidden_sizes(2, 2, 4, 4, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        assert!(act_epsilon_greedy(&p, &[0.0, 0.0], 1.5, &mut rng).is_err());
    }

    #[test]
    fn advantage_shift_preserves_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..20 {
            let p = DuelingParams::<f64>::with_hidden_sizes(3, 4, 16, 16, 100 + trial);
            let mut shifted = p.clone();
            for b in shifted.adv_head.b.iter_mut() {
                *b += 37.5;
            }
            let mut states = Mat::zeros(6, 3);
            for v in states.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let q0 = forward(&p, &states).unwrap();
            let q1 = forward(&shifted, &states).unwrap();
            for i in 0..6 {
                assert_eq!(greedy_action(q0.row(i)), greedy_action(q1.row(i)));
            }
        }
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let p = DuelingParams::<f32>::with_hidden_sizes(2, 2, 4, 4, 24);
        let states = Mat::from_rows(&[&[f32::NAN, 0.0]]);
        match forward(&p, &states) {
            Err(Error::NonFinite { location }) => assert_eq!(location, "shared layer"),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
    }
}
