//! Fixed-capacity FIFO experience replay resident on a device.
//!
//! Adds are staged in a host-side queue and written to the device in
//! blocks of `update_size` rows, one scatter per block, which is what
//! amortizes the per-transfer overhead. Samples are drawn uniformly with
//! replacement over the device-resident rows and gathered on-device, so
//! training never copies an experience back across the host boundary.

use rand::{Rng, SeedableRng};

use crate::device::{Device, DeviceBuffer2D};
use crate::error::{Error, Result};
use crate::experience::{pack_rows, unpack_batch, Experience, RowLayout, UnpackedBatch};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy)]
pub struct ReplayConfig {
    /// Total experiences the ring holds.
    pub capacity: usize,
    /// Experiences staged on the host before one block scatter.
    pub update_size: usize,
    /// Burn-in threshold: sampling fails below this visible size.
    pub min_sample_size: usize,
    /// Resample duplicate indices so a batch holds distinct experiences.
    /// Off by default: uniform-with-replacement is the baseline behavior.
    pub distinct_sampling: bool,
    pub layout: RowLayout,
}

impl ReplayConfig {
    /// Defaults everything but capacity and layout; `min_sample_size`
    /// defaults to `update_size` so the first flush enables sampling.
    pub fn new(capacity: usize, update_size: usize, layout: RowLayout) -> Self {
        Self {
            capacity,
            update_size,
            min_sample_size: update_size,
            distinct_sampling: false,
            layout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.update_size == 0 {
            return Err(Error::InvalidConfig(
                "capacity and update_size must be >= 1".into(),
            ));
        }
        if self.capacity % self.update_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "capacity {} must be a multiple of update_size {} so blocks tile the ring",
                self.capacity, self.update_size
            )));
        }
        if self.min_sample_size == 0 || self.min_sample_size > self.capacity {
            return Err(Error::InvalidConfig(format!(
                "min_sample_size {} must be in [1, capacity {}]",
                self.min_sample_size, self.capacity
            )));
        }
        Ok(())
    }
}

/// Device-resident replay ring with host-side staging.
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    storage: DeviceBuffer2D,
    staging: Vec<Experience>,
    /// Physical row where the next flushed experience lands; wraps
    /// modulo capacity, so blocks overwrite oldest-first.
    write_pos: usize,
    visible: usize,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let storage = device.allocate(cfg.capacity, cfg.layout.row_width())?;
        Ok(Self {
            cfg,
            storage,
            staging: Vec::with_capacity(cfg.update_size),
            write_pos: 0,
            visible: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    /// Device-resident experiences available for sampling.
    pub fn size(&self) -> usize {
        self.visible
    }

    /// Experiences staged on the host, not yet visible to sampling.
    pub fn staged(&self) -> usize {
        self.staging.len()
    }

    /// Queue one experience; when the queue reaches `update_size` the
    /// whole block is packed and scattered to the device in a single
    /// transfer.
    pub fn add(&mut self, exp: Experience) -> Result<()> {
        if exp.old_state.len() != self.cfg.layout.state_dim()
            || exp.new_state.len() != self.cfg.layout.state_dim()
        {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.layout.state_dim(),
                actual: exp.old_state.len().max(exp.new_state.len()),
            });
        }
        self.staging.push(exp);
        if self.staging.len() == self.cfg.update_size {
            self.flush_staged()?;
        }
        Ok(())
    }

    /// Force any staged experiences to the device (one transfer of
    /// `k < update_size` rows); returns how many were written. The write
    /// cursor keeps filling the same block afterwards.
    pub fn flush(&mut self) -> Result<usize> {
        let k = self.staging.len();
        if k > 0 {
            self.flush_staged()?;
        }
        Ok(k)
    }

    fn flush_staged(&mut self) -> Result<()> {
        let k = self.staging.len();
        let rows = pack_rows(&self.staging, &self.cfg.layout)?;
        let indices: Vec<usize> = (0..k)
            .map(|i| (self.write_pos + i) % self.cfg.capacity)
            .collect();
        self.storage.scatter_rows(&indices, &rows)?;
        self.write_pos = (self.write_pos + k) % self.cfg.capacity;
        self.visible = (self.visible + k).min(self.cfg.capacity);
        self.staging.clear();
        Ok(())
    }

    /// Draw `batch_size` indices uniformly over `[0, size)`, gather the
    /// rows on-device, and unpack. With-replacement by default; with
    /// `distinct_sampling` duplicates are redrawn, which then requires
    /// `batch_size <= size`.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<UnpackedBatch> {
        let rows = self.sample_rows(batch_size, rng)?;
        unpack_batch(&rows, &self.cfg.layout)
    }

    /// Like [`sample`](Self::sample) but returns the packed rows; the
    /// result stays on-device (no transfer is counted).
    pub fn sample_rows(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Mat<f32>> {
        let indices = self.sample_indices(batch_size, rng)?;
        self.storage.gather_rows(&indices)
    }

    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.visible < self.cfg.min_sample_size {
            return Err(Error::NotReady {
                size: self.visible,
                min: self.cfg.min_sample_size,
            });
        }
        if self.cfg.distinct_sampling && batch_size > self.visible {
            return Err(Error::InvalidArgument(format!(
                "distinct sampling of {batch_size} from {} visible experiences is impossible",
                self.visible
            )));
        }
        let mut indices = Vec::with_capacity(batch_size);
        if self.cfg.distinct_sampling {
            let mut taken = vec![false; self.visible];
            while indices.len() < batch_size {
                let i = rng.gen_range(0..self.visible);
                if !taken[i] {
                    taken[i] = true;
                    indices.push(i);
                }
            }
        } else {
            for _ in 0..batch_size {
                indices.push(rng.gen_range(0..self.visible));
            }
        }
        Ok(indices)
    }

    /// Transfer counters of the device this ring lives on.
    pub fn device(&self) -> &Device {
        self.storage.device()
    }

    /// Packed rows currently visible to sampling, in physical order.
    /// Test support: uses the on-device view, no transfer counted.
    pub fn visible_rows(&self) -> Result<Mat<f32>> {
        let indices: Vec<usize> = (0..self.visible).collect();
        self.storage.gather_rows(&indices)
    }
}

/// Host-RAM replay ring: the in-RAM baseline the device-resident ring is
/// measured against. Adds are plain memory writes; every sampled batch
/// must later be copied to the device by the caller.
pub struct HostReplay {
    layout: RowLayout,
    capacity: usize,
    rows: Vec<f32>,
    write_pos: usize,
    len: usize,
    min_sample_size: usize,
}

impl HostReplay {
    pub fn new(capacity: usize, min_sample_size: usize, layout: RowLayout) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("capacity must be >= 1".into()));
        }
        if min_sample_size == 0 || min_sample_size > capacity {
            return Err(Error::InvalidConfig(format!(
                "min_sample_size {min_sample_size} must be in [1, capacity {capacity}]"
            )));
        }
        Ok(Self {
            layout,
            capacity,
            rows: vec![0.0; capacity * layout.row_width()],
            write_pos: 0,
            len: 0,
            min_sample_size,
        })
    }

    pub fn size(&self) -> usize {
        self.len
    }

    pub fn add(&mut self, exp: &Experience) -> Result<()> {
        let row = crate::experience::pack_experience(exp, &self.layout)?;
        let w = self.layout.row_width();
        self.rows[self.write_pos * w..(self.write_pos + 1) * w].copy_from_slice(row.as_slice());
        self.write_pos = (self.write_pos + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Uniform-with-replacement sample of packed rows, assembled on the
    /// host. Mirrors the device ring's index distribution so the two
    /// modes differ only in where the bytes live.
    pub fn sample_rows(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Mat<f32>> {
        if self.len < self.min_sample_size {
            return Err(Error::NotReady {
                size: self.len,
                min: self.min_sample_size,
            });
        }
        let w = self.layout.row_width();
        let mut out = Mat::zeros(batch_size, w);
        for k in 0..batch_size {
            let i = rng.gen_range(0..self.len);
            out.row_mut(k).copy_from_slice(&self.rows[i * w..(i + 1) * w]);
        }
        Ok(out)
    }
}

/// Probability that a uniform-with-replacement sample of `sample_size`
/// indices from `replay_size` contains a duplicate: the birthday product
/// `1 - prod_{i=0}^{k-1} (1 - i/N)`.
pub fn duplicate_probability_analytic(sample_size: usize, replay_size: usize) -> f64 {
    let n = replay_size as f64;
    let mut p_distinct = 1.0f64;
    for i in 0..sample_size {
        p_distinct *= 1.0 - i as f64 / n;
    }
    1.0 - p_distinct
}

/// Monte Carlo estimate of the same probability.
pub fn duplicate_probability_monte_carlo(
    sample_size: usize,
    replay_size: usize,
    trials: u64,
    seed: u64,
) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut duplicates = 0u64;
    let mut draw = vec![0usize; sample_size];
    for _ in 0..trials {
        for v in draw.iter_mut() {
            *v = rng.gen_range(0..replay_size);
        }
        draw.sort_unstable();
        if draw.windows(2).any(|w| w[0] == w[1]) {
            duplicates += 1;
        }
    }
    duplicates as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::CostModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim_device() -> Device {
        Device::simulated(CostModel::default())
    }

    /// Experience whose payload encodes a counter, for FIFO tracking.
    fn stamped(layout: &RowLayout, stamp: f32) -> Experience {
        Experience {
            old_state: vec![stamp; layout.state_dim()],
            action: 0,
            reward: stamp,
            new_state: vec![-stamp; layout.state_dim()],
            terminal: false,
        }
    }

    #[test]
    fn config_requires_block_tiling() {
        let layout = RowLayout::new(1).unwrap();
        let cfg = ReplayConfig::new(10, 3, layout);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        assert!(ReplayConfig::new(12, 3, layout).validate().is_ok());
    }

    #[test]
    fn block_of_2000_is_one_transfer_of_456000_bytes() {
        let layout = RowLayout::new(27).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(10_000, 2000, layout), &dev).unwrap();
        for i in 0..2000 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        let stats = dev.stats();
        assert_eq!(stats.transfers_to_device, 1);
        assert_eq!(stats.bytes_to_device, 456_000);
        assert_eq!(buf.size(), 2000);
        assert_eq!(buf.staged(), 0);
    }

    #[test]
    fn fifo_on_tiny_ring() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(4, 2, layout), &dev).unwrap();
        for i in 1..=6 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        assert_eq!(buf.size(), 4);
        let rows = buf.visible_rows().unwrap();
        let mut stamps: Vec<f32> = (0..4).map(|i| rows.get(i, 0)).collect();
        stamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(stamps, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn million_adds_count_500_transfers() {
        let layout = RowLayout::new(27).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(100_000, 2000, layout), &dev).unwrap();
        let exp = stamped(&layout, 1.0);
        for _ in 0..1_000_000 {
            buf.add(exp.clone()).unwrap();
        }
        let stats = dev.stats();
        assert_eq!(stats.transfers_to_device, 500);
        assert_eq!(stats.bytes_to_device, 228_000_000);
    }

    #[test]
    fn flush_empty_queue_returns_zero() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(4000, 2000, layout), &dev).unwrap();
        assert_eq!(buf.flush().unwrap(), 0);
        assert_eq!(dev.stats().transfers_to_device, 0);
    }

    #[test]
    fn partial_flush_writes_staged_rows() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(4000, 2000, layout), &dev).unwrap();
        for i in 0..3 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        assert_eq!(buf.flush().unwrap(), 3);
        let stats = dev.stats();
        assert_eq!(stats.transfers_to_device, 1);
        assert_eq!(stats.bytes_to_device, 3 * 5 * 4);
        assert_eq!(buf.size(), 3);
    }

    #[test]
    fn partial_flush_resumes_same_block() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(4, 2, layout), &dev).unwrap();
        buf.add(stamped(&layout, 1.0)).unwrap();
        buf.flush().unwrap();
        // Next two adds complete the first block and start the second.
        buf.add(stamped(&layout, 2.0)).unwrap();
        buf.add(stamped(&layout, 3.0)).unwrap();
        buf.flush().unwrap();
        let rows = buf.visible_rows().unwrap();
        assert_eq!(buf.size(), 3);
        assert_eq!(rows.get(0, 0), 1.0);
        assert_eq!(rows.get(1, 0), 2.0);
        assert_eq!(rows.get(2, 0), 3.0);
    }

    #[test]
    fn size_counts_only_flushed() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(8, 2, layout), &dev).unwrap();
        assert_eq!(buf.size(), 0);
        for i in 0..4 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        assert_eq!(buf.size(), 4);
        for i in 0..10 {
            buf.add(stamped(&layout, (10 + i) as f32)).unwrap();
        }
        // capacity + update_size adds in total: capped at capacity.
        assert_eq!(buf.size(), 8);
    }

    #[test]
    fn sample_before_burn_in_is_not_ready() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(4, 2, layout), &dev).unwrap();
        buf.add(stamped(&layout, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample(1, &mut rng),
            Err(Error::NotReady { size: 0, min: 2 })
        ));
    }

    #[test]
    fn single_visible_experience_repeats_across_batch() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut cfg = ReplayConfig::new(4, 2, layout);
        cfg.min_sample_size = 1;
        let mut buf = ReplayBuffer::new(cfg, &dev).unwrap();
        buf.add(stamped(&layout, 7.0)).unwrap();
        buf.flush().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        for i in 0..4 {
            assert_eq!(batch.old_states.row(i), &[7.0]);
            assert_eq!(batch.rewards[i], 7.0);
        }
    }

    #[test]
    fn staged_experiences_are_never_sampled() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut cfg = ReplayConfig::new(8, 4, layout);
        cfg.min_sample_size = 4;
        let mut buf = ReplayBuffer::new(cfg, &dev).unwrap();
        for i in 0..4 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        // Three staged beyond the last flush; stamps 100..102.
        for i in 0..3 {
            buf.add(stamped(&layout, 100.0 + i as f32)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let batch = buf.sample(8, &mut rng).unwrap();
            for i in 0..batch.len() {
                assert!(batch.rewards[i] < 100.0, "sampled a staged experience");
            }
        }
    }

    #[test]
    fn sampling_never_touches_transfer_counters() {
        let layout = RowLayout::new(3).unwrap();
        let dev = sim_device();
        let mut buf = ReplayBuffer::new(ReplayConfig::new(16, 4, layout), &dev).unwrap();
        for i in 0..16 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        let before = dev.stats();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            buf.sample(8, &mut rng).unwrap();
        }
        // One copy per experience: sampling adds nothing.
        assert_eq!(dev.stats(), before);
        assert_eq!(before.bytes_to_device, 16 * 9 * 4);
    }

    #[test]
    fn distinct_sampling_yields_unique_indices() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut cfg = ReplayConfig::new(8, 2, layout);
        cfg.distinct_sampling = true;
        let mut buf = ReplayBuffer::new(cfg, &dev).unwrap();
        for i in 0..8 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let indices = buf.sample_indices(8, &mut rng).unwrap();
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 8);
        }
        assert!(matches!(
            buf.sample_indices(9, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sampling_marginals_are_uniform() {
        let layout = RowLayout::new(1).unwrap();
        let dev = sim_device();
        let mut cfg = ReplayConfig::new(10, 10, layout);
        cfg.min_sample_size = 10;
        let mut buf = ReplayBuffer::new(cfg, &dev).unwrap();
        for i in 0..10 {
            buf.add(stamped(&layout, i as f32)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 100_000usize;
        let mut counts = [0u64; 10];
        for _ in 0..trials {
            let idx = buf.sample_indices(1, &mut rng).unwrap()[0];
            counts[idx] += 1;
        }
        let expected = trials as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99% critical value for chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    /// Brute-force drop-oldest list oracle for the ring's visible set.
    struct ListOracle {
        capacity: usize,
        items: Vec<f32>,
        staged: Vec<f32>,
        update_size: usize,
    }

    impl ListOracle {
        fn add(&mut self, stamp: f32) {
            self.staged.push(stamp);
            if self.staged.len() == self.update_size {
                self.flush();
            }
        }

        fn flush(&mut self) {
            for s in self.staged.drain(..) {
                self.items.push(s);
                if self.items.len() > self.capacity {
                    self.items.remove(0);
                }
            }
        }
    }

    #[test]
    fn fifo_matches_list_oracle_randomized() {
        let layout = RowLayout::new(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let update_size = rng.gen_range(1..=10usize);
            let blocks = rng.gen_range(1..=10usize);
            let capacity = update_size * blocks;
            let dev = sim_device();
            let mut buf =
                ReplayBuffer::new(ReplayConfig::new(capacity, update_size, layout), &dev).unwrap();
            let mut oracle = ListOracle {
                capacity,
                items: Vec::new(),
                staged: Vec::new(),
                update_size,
            };
            let mut stamp = 0.0f32;
            for _ in 0..rng.gen_range(1..=300usize) {
                if rng.gen_bool(0.9) {
                    stamp += 1.0;
                    buf.add(stamped(&layout, stamp)).unwrap();
                    oracle.add(stamp);
                } else {
                    buf.flush().unwrap();
                    oracle.flush();
                }
            }
            let rows = buf.visible_rows().unwrap();
            let mut got: Vec<f32> = (0..buf.size()).map(|i| rows.get(i, 0)).collect();
            let mut want = oracle.items.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want);
        }
    }

    #[test]
    fn duplicate_probability_birthday_product() {
        // k=32 draws from N=10^6: ~4.96e-4.
        let p = duplicate_probability_analytic(32, 1_000_000);
        assert!((p - 4.957e-4).abs() < 1e-6, "p = {p}");
        // Degenerate cases.
        assert_eq!(duplicate_probability_analytic(1, 10), 0.0);
        assert_eq!(duplicate_probability_analytic(11, 10), 1.0);
    }

    #[test]
    fn duplicate_probability_monte_carlo_matches_analytic() {
        // Cheap regime where the effect is large: k=8, N=64.
        let analytic = duplicate_probability_analytic(8, 64);
        let mc = duplicate_probability_monte_carlo(8, 64, 200_000, 9);
        assert!(
            (mc - analytic).abs() < 0.01,
            "mc {mc} vs analytic {analytic}"
        );
    }

    #[test]
    fn host_replay_fifo_and_sampling() {
        let layout = RowLayout::new(1).unwrap();
        let mut host = HostReplay::new(4, 2, layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(matches!(
            host.sample_rows(2, &mut rng),
            Err(Error::NotReady { .. })
        ));
        for i in 1..=6 {
            host.add(&stamped(&layout, i as f32)).unwrap();
        }
        assert_eq!(host.size(), 4);
        for _ in 0..100 {
            let rows = host.sample_rows(3, &mut rng).unwrap();
            for i in 0..3 {
                assert!(rows.get(i, 0) >= 3.0, "old experience not evicted");
            }
        }
    }
}
