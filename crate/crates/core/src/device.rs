//! Simulated compute device: 2-D float storage with scatter/gather row
//! access and exact accounting of every byte that crosses the
//! host <-> device boundary.
//!
//! Two timing backends sit behind the same interface. The simulated
//! backend charges a deterministic cost-model clock (fixed overhead per
//! transfer plus bytes over bandwidth) and powers every assertion in the
//! test suite. The wall-clock backend times the actual memory traffic it
//! performs and is informative only; on a machine with a real
//! accelerator this is where a hardware implementation would plug in.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const BYTES_PER_FLOAT: u64 = 4;

/// Default device memory limit: 12 GB.
pub const DEFAULT_MEMORY_LIMIT: u64 = 12_000_000_000;

/// Deterministic per-transfer cost: `fixed_overhead + bytes / bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Seconds charged per transfer regardless of size.
    pub fixed_overhead_s: f64,
    /// Sustained transfer bandwidth in bytes per second.
    pub bandwidth_bps: f64,
}

impl CostModel {
    pub fn new(fixed_overhead_s: f64, bandwidth_bps: f64) -> Result<Self> {
        if fixed_overhead_s <= 0.0 || bandwidth_bps <= 0.0 {
            return Err(Error::InvalidConfig(
                "cost model overhead and bandwidth must be strictly positive".into(),
            ));
        }
        Ok(Self {
            fixed_overhead_s,
            bandwidth_bps,
        })
    }

    pub fn transfer_seconds(&self, bytes: u64) -> f64 {
        self.fixed_overhead_s + bytes as f64 / self.bandwidth_bps
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            fixed_overhead_s: 20e-6,
            bandwidth_bps: 6e9,
        }
    }
}

/// How transfer time is charged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timing {
    /// Deterministic cost-model clock.
    Simulated(CostModel),
    /// Measure the memory traffic actually performed. Informative only.
    WallClock,
}

/// Running totals of host <-> device traffic.
///
/// All counters are monotonically non-decreasing. `time_s` is the
/// cost-model clock under [`Timing::Simulated`] and measured elapsed
/// time under [`Timing::WallClock`]; allocation is never charged.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransferStats {
    pub bytes_to_device: u64,
    pub bytes_from_device: u64,
    pub transfers_to_device: u64,
    pub transfers_from_device: u64,
    pub time_s: f64,
}

impl TransferStats {
    /// Counter deltas accumulated since an earlier snapshot.
    pub fn since(&self, earlier: &TransferStats) -> TransferStats {
        TransferStats {
            bytes_to_device: self.bytes_to_device - earlier.bytes_to_device,
            bytes_from_device: self.bytes_from_device - earlier.bytes_from_device,
            transfers_to_device: self.transfers_to_device - earlier.transfers_to_device,
            transfers_from_device: self.transfers_from_device - earlier.transfers_from_device,
            time_s: self.time_s - earlier.time_s,
        }
    }
}

struct DeviceInner {
    timing: Timing,
    memory_limit: u64,
    allocated: AtomicU64,
    stats: Mutex<TransferStats>,
}

/// Handle to a device. Cloning shares the transfer ledger and memory
/// budget; buffers allocated from the same handle report into one
/// [`TransferStats`].
#[derive(Clone)]
pub struct Device {
    inner: Arc<DeviceInner>,
}

impl Device {
    pub fn new(timing: Timing, memory_limit: u64) -> Self {
        Self {
            inner: Arc::new(DeviceInner {
                timing,
                memory_limit,
                allocated: AtomicU64::new(0),
                stats: Mutex::new(TransferStats::default()),
            }),
        }
    }

    /// Simulated device with the given cost model and the default memory limit.
    pub fn simulated(cost: CostModel) -> Self {
        Self::new(Timing::Simulated(cost), DEFAULT_MEMORY_LIMIT)
    }

    pub fn wall_clock() -> Self {
        Self::new(Timing::WallClock, DEFAULT_MEMORY_LIMIT)
    }

    pub fn timing(&self) -> Timing {
        self.inner.timing
    }

    /// Snapshot of the transfer counters.
    pub fn stats(&self) -> TransferStats {
        *self.inner.stats.lock().unwrap()
    }

    pub fn allocated_bytes(&self) -> u64 {
        self.inner.allocated.load(Ordering::Relaxed)
    }

    /// Allocate a zero-initialized `rows x cols` buffer on this device.
    /// Allocation is counted against the memory limit but never against
    /// the transfer clock.
    pub fn allocate(&self, rows: usize, cols: usize) -> Result<DeviceBuffer2D> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "buffer dimensions must be >= 1".into(),
            ));
        }
        let requested = rows as u64 * cols as u64 * BYTES_PER_FLOAT;
        let used = self.inner.allocated.load(Ordering::Relaxed);
        let available = self.inner.memory_limit.saturating_sub(used);
        if requested > available {
            return Err(Error::Allocation {
                requested,
                available,
            });
        }
        self.inner.allocated.fetch_add(requested, Ordering::Relaxed);
        Ok(DeviceBuffer2D {
            device: self.clone(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        })
    }

    fn record_to_device(&self, bytes: u64, measured_s: f64) {
        let mut stats = self.inner.stats.lock().unwrap();
        stats.bytes_to_device += bytes;
        stats.transfers_to_device += 1;
        stats.time_s += match self.inner.timing {
            Timing::Simulated(cost) => cost.transfer_seconds(bytes),
            Timing::WallClock => measured_s,
        };
    }

    fn record_from_device(&self, bytes: u64, measured_s: f64) {
        let mut stats = self.inner.stats.lock().unwrap();
        stats.bytes_from_device += bytes;
        stats.transfers_from_device += 1;
        stats.time_s += match self.inner.timing {
            Timing::Simulated(cost) => cost.transfer_seconds(bytes),
            Timing::WallClock => measured_s,
        };
    }
}

/// 2-D float storage resident on a [`Device`].
pub struct DeviceBuffer2D {
    device: Device,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DeviceBuffer2D {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
        }
        Ok(())
    }

    /// Replace the rows at `indices` with the rows of `data` in one
    /// host -> device transfer of `k * cols * 4` bytes. All indices are
    /// validated before anything is written; `k = 0` is a no-op and
    /// counts no transfer.
    pub fn scatter_rows(&mut self, indices: &[usize], data: &Mat<f32>) -> Result<()> {
        if data.cols() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: data.cols(),
            });
        }
        if data.rows() != indices.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: data.rows(),
            });
        }
        self.check_indices(indices)?;
        if indices.is_empty() {
            return Ok(());
        }
        let start = Instant::now();
        for (k, &i) in indices.iter().enumerate() {
            self.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(data.row(k));
        }
        let measured = start.elapsed().as_secs_f64();
        let bytes = indices.len() as u64 * self.cols as u64 * BYTES_PER_FLOAT;
        self.device.record_to_device(bytes, measured);
        Ok(())
    }

    /// Read the rows at `indices` into a `k x cols` matrix that stays on
    /// the device: no host <-> device traffic is counted. Duplicate
    /// indices are permitted.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Mat<f32>> {
        self.check_indices(indices)?;
        let mut out = Mat::zeros(indices.len(), self.cols);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k)
                .copy_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        Ok(out)
    }

    /// Gather rows and export them to the host, counting one
    /// device -> host transfer of `k * cols * 4` bytes.
    pub fn read_rows_to_host(&self, indices: &[usize]) -> Result<Mat<f32>> {
        self.check_indices(indices)?;
        if indices.is_empty() {
            return Ok(Mat::zeros(0, self.cols));
        }
        let start = Instant::now();
        let out = self.gather_rows(indices)?;
        let measured = start.elapsed().as_secs_f64();
        let bytes = indices.len() as u64 * self.cols as u64 * BYTES_PER_FLOAT;
        self.device.record_from_device(bytes, measured);
        Ok(out)
    }
}

impl Drop for DeviceBuffer2D {
    fn drop(&mut self) {
        let bytes = self.rows as u64 * self.cols as u64 * BYTES_PER_FLOAT;
        self.device.inner.allocated.fetch_sub(bytes, Ordering::Relaxed);
    }
}
