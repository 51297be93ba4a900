//! Experience tuples and their packed single-row encoding.
//!
//! One experience is stored on the device as a flat row of `2*D + 3`
//! floats laid out as `[old_state | new_state | action | reward |
//! terminal]`. Action and terminal are cast to floats on pack and cast
//! back on unpack, so the casting is invisible to callers.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Largest action id that survives an exact round-trip through an f32.
pub const MAX_EXACT_ACTION: u32 = 1 << 24;

/// One environment transition: `(old_state, action, reward, new_state, terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub old_state: Vec<f32>,
    pub action: u32,
    pub reward: f32,
    pub new_state: Vec<f32>,
    pub terminal: bool,
}

/// Offsets of the five fields within a packed row of width `2*D + 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLayout {
    state_dim: usize,
}

impl RowLayout {
    pub fn new(state_dim: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidConfig("state_dim must be >= 1".into()));
        }
        Ok(Self { state_dim })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `2*D + 3`: two states plus action, reward, terminal.
    pub fn row_width(&self) -> usize {
        2 * self.state_dim + 3
    }

    pub fn old_state_range(&self) -> std::ops::Range<usize> {
        0..self.state_dim
    }

    pub fn new_state_range(&self) -> std::ops::Range<usize> {
        self.state_dim..2 * self.state_dim
    }

    pub fn action_index(&self) -> usize {
        2 * self.state_dim
    }

    pub fn reward_index(&self) -> usize {
        2 * self.state_dim + 1
    }

    pub fn terminal_index(&self) -> usize {
        2 * self.state_dim + 2
    }
}

/// A single packed experience row.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRow(Vec<f32>);

impl PackedRow {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

/// Batch of unpacked experiences in column form.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpackedBatch {
    pub old_states: Mat<f32>,
    pub new_states: Mat<f32>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub terminals: Vec<bool>,
}

impl UnpackedBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn check_state_dims(exp: &Experience, layout: &RowLayout) -> Result<()> {
    if exp.old_state.len() != layout.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.state_dim(),
            actual: exp.old_state.len(),
        });
    }
    if exp.new_state.len() != layout.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.state_dim(),
            actual: exp.new_state.len(),
        });
    }
    Ok(())
}

/// Pack one experience into a flat row per the layout.
pub fn pack_experience(exp: &Experience, layout: &RowLayout) -> Result<PackedRow> {
    check_state_dims(exp, layout)?;
    if exp.action >= MAX_EXACT_ACTION {
        return Err(Error::InvalidArgument(format!(
            "action {} is not exactly representable as an f32 (must be < 2^24)",
            exp.action
        )));
    }
    let mut values = Vec::with_capacity(layout.row_width());
    values.extend_from_slice(&exp.old_state);
    values.extend_from_slice(&exp.new_state);
    values.push(exp.action as f32);
    values.push(exp.reward);
    values.push(if exp.terminal { 1.0 } else { 0.0 });
    Ok(PackedRow(values))
}

/// Pack a slice of experiences into a `k x row_width` matrix, row per experience.
pub fn pack_rows(exps: &[Experience], layout: &RowLayout) -> Result<Mat<f32>> {
    let mut out = Mat::zeros(exps.len(), layout.row_width());
    for (i, exp) in exps.iter().enumerate() {
        let row = pack_experience(exp, layout)?;
        out.row_mut(i).copy_from_slice(row.as_slice());
    }
    Ok(out)
}

fn unpack_slice(row: &[f32], layout: &RowLayout) -> Result<Experience> {
    if row.len() != layout.row_width() {
        return Err(Error::DimensionMismatch {
            expected: layout.row_width(),
            actual: row.len(),
        });
    }
    let action_f = row[layout.action_index()];
    if !(action_f >= 0.0 && action_f.fract() == 0.0 && action_f < MAX_EXACT_ACTION as f32) {
        return Err(Error::CorruptRow(format!(
            "action slot holds {action_f}, not a non-negative integer below 2^24"
        )));
    }
    let terminal_f = row[layout.terminal_index()];
    let terminal = match terminal_f {
        t if t == 0.0 => false,
        t if t == 1.0 => true,
        t => {
            return Err(Error::CorruptRow(format!(
                "terminal slot holds {t}, expected 0.0 or 1.0"
            )))
        }
    };
    Ok(Experience {
        old_state: row[layout.old_state_range()].to_vec(),
        new_state: row[layout.new_state_range()].to_vec(),
        action: action_f as u32,
        reward: row[layout.reward_index()],
        terminal,
    })
}

/// Inverse of [`pack_experience`]; bit-exact on state and reward floats.
pub fn unpack_experience(row: &PackedRow, layout: &RowLayout) -> Result<Experience> {
    unpack_slice(row.as_slice(), layout)
}

/// Column-slice a `B x row_width` matrix of packed rows into field tensors.
pub fn unpack_batch(rows: &Mat<f32>, layout: &RowLayout) -> Result<UnpackedBatch> {
    if rows.cols() != layout.row_width() {
        return Err(Error::DimensionMismatch {
            expected: layout.row_width(),
            actual: rows.cols(),
        });
    }
    let b = rows.rows();
    let d = layout.state_dim();
    let mut old_states = Mat::zeros(b, d);
    let mut new_states = Mat::zeros(b, d);
    let mut actions = Vec::with_capacity(b);
    let mut rewards = Vec::with_capacity(b);
    let mut terminals = Vec::with_capacity(b);
    for i in 0..b {
        let exp = unpack_slice(rows.row(i), layout)
            .map_err(|e| Error::CorruptRow(format!("row {i}: {e}")))?;
        old_states.row_mut(i).copy_from_slice(&exp.old_state);
        new_states.row_mut(i).copy_from_slice(&exp.new_state);
        actions.push(exp.action);
        rewards.push(exp.reward);
        terminals.push(exp.terminal);
    }
    Ok(UnpackedBatch {
        old_states,
        new_states,
        actions,
        rewards,
        terminals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp_d2() -> Experience {
        Experience {
            old_state: vec![1.0, 2.0],
            action: 3,
            reward: 0.5,
            new_state: vec![4.0, 5.0],
            terminal: true,
        }
    }

    #[test]
    fn pack_d2_example() {
        let layout = RowLayout::new(2).unwrap();
        let row = pack_experience(&exp_d2(), &layout).unwrap();
        assert_eq!(row.as_slice(), &[1.0, 2.0, 4.0, 5.0, 3.0, 0.5, 1.0]);
    }

    #[test]
    fn row_width_for_d27_is_57() {
        let layout = RowLayout::new(27).unwrap();
        assert_eq!(layout.row_width(), 57);
    }

    #[test]
    fn pack_zero_case() {
        let layout = RowLayout::new(1).unwrap();
        let exp = Experience {
            old_state: vec![0.0],
            action: 0,
            reward: 0.0,
            new_state: vec![0.0],
            terminal: false,
        };
        let row = pack_experience(&exp, &layout).unwrap();
        assert_eq!(row.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unpack_inverts_pack_example() {
        let layout = RowLayout::new(2).unwrap();
        let row = PackedRow::new(vec![1.0, 2.0, 4.0, 5.0, 3.0, 0.5, 1.0]);
        let exp = unpack_experience(&row, &layout).unwrap();
        assert_eq!(exp, exp_d2());
    }

    #[test]
    fn pack_rejects_dimension_mismatch() {
        let layout = RowLayout::new(3).unwrap();
        let err = pack_experience(&exp_d2(), &layout).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, actual: 2 }));
    }

    #[test]
    fn pack_rejects_unrepresentable_action() {
        let layout = RowLayout::new(1).unwrap();
        let exp = Experience {
            old_state: vec![0.0],
            action: MAX_EXACT_ACTION,
            reward: 0.0,
            new_state: vec![0.0],
            terminal: false,
        };
        assert!(matches!(
            pack_experience(&exp, &layout),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unpack_rejects_bad_terminal_slot() {
        let layout = RowLayout::new(2).unwrap();
        let row = PackedRow::new(vec![1.0, 2.0, 4.0, 5.0, 3.0, 0.5, 0.5]);
        assert!(matches!(
            unpack_experience(&row, &layout),
            Err(Error::CorruptRow(_))
        ));
    }

    #[test]
    fn layout_offsets_disjoint_and_cover_row() {
        for d in [1usize, 2, 27, 64] {
            let layout = RowLayout::new(d).unwrap();
            let mut seen = vec![0u32; layout.row_width()];
            for i in layout.old_state_range() {
                seen[i] += 1;
            }
            for i in layout.new_state_range() {
                seen[i] += 1;
            }
            seen[layout.action_index()] += 1;
            seen[layout.reward_index()] += 1;
            seen[layout.terminal_index()] += 1;
            assert!(seen.iter().all(|&c| c == 1), "D={d}");
            assert_eq!(layout.row_width(), 2 * d + 3);
        }
    }

    fn random_experience(rng: &mut ChaCha8Rng, d: usize) -> Experience {
        Experience {
            old_state: (0..d).map(|_| rng.gen_range(-100.0..100.0)).collect(),
            action: rng.gen_range(0..MAX_EXACT_ACTION),
            reward: rng.gen_range(-10.0..10.0),
            new_state: (0..d).map(|_| rng.gen_range(-100.0..100.0)).collect(),
            terminal: rng.gen_bool(0.3),
        }
    }

    #[test]
    fn roundtrip_identity_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let d = rng.gen_range(1..=64);
            let layout = RowLayout::new(d).unwrap();
            let exp = random_experience(&mut rng, d);
            let row = pack_experience(&exp, &layout).unwrap();
            let back = unpack_experience(&row, &layout).unwrap();
            // Bit-exact on floats, exact on action/terminal.
            assert_eq!(back.action, exp.action);
            assert_eq!(back.terminal, exp.terminal);
            assert_eq!(back.reward.to_bits(), exp.reward.to_bits());
            for (a, b) in back.old_state.iter().zip(&exp.old_state) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in back.new_state.iter().zip(&exp.new_state) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn batch_unpack_single_row_reduces_to_unpack() {
        let layout = RowLayout::new(2).unwrap();
        let rows = pack_rows(&[exp_d2()], &layout).unwrap();
        let batch = unpack_batch(&rows, &layout).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.old_states.row(0), &[1.0, 2.0]);
        assert_eq!(batch.new_states.row(0), &[4.0, 5.0]);
        assert_eq!(batch.actions, vec![3]);
        assert_eq!(batch.rewards, vec![0.5]);
        assert_eq!(batch.terminals, vec![true]);
    }

    #[test]
    fn batch_unpack_preserves_order() {
        let layout = RowLayout::new(2).unwrap();
        let e1 = exp_d2();
        let e2 = Experience {
            old_state: vec![-1.0, -2.0],
            action: 0,
            reward: 2.5,
            new_state: vec![-4.0, -5.0],
            terminal: false,
        };
        let rows = pack_rows(&[e1.clone(), e2.clone()], &layout).unwrap();
        let batch = unpack_batch(&rows, &layout).unwrap();
        assert_eq!(batch.actions, vec![e1.action, e2.action]);
        assert_eq!(batch.rewards, vec![e1.reward, e2.reward]);
        assert_eq!(batch.terminals, vec![true, false]);
        assert_eq!(batch.old_states.row(1), e2.old_state.as_slice());
    }

    #[test]
    fn batch_unpack_matches_per_row_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layout = RowLayout::new(3).unwrap();
        let exps: Vec<Experience> = (0..16).map(|_| random_experience(&mut rng, 3)).collect();
        let rows = pack_rows(&exps, &layout).unwrap();
        let batch = unpack_batch(&rows, &layout).unwrap();
        // Oracle: unpack each row independently.
        for (i, exp) in exps.iter().enumerate() {
            let row = PackedRow::new(rows.row(i).to_vec());
            let one = unpack_experience(&row, &layout).unwrap();
            assert_eq!(&one, exp);
            assert_eq!(batch.old_states.row(i), one.old_state.as_slice());
            assert_eq!(batch.new_states.row(i), one.new_state.as_slice());
            assert_eq!(batch.actions[i], one.action);
            assert_eq!(batch.rewards[i], one.reward);
            assert_eq!(batch.terminals[i], one.terminal);
        }
    }

    #[test]
    fn batch_unpack_rejects_width_mismatch() {
        let layout = RowLayout::new(2).unwrap();
        let rows = Mat::zeros(2, 6);
        assert!(matches!(
            unpack_batch(&rows, &layout),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
