//! One sampling interface over the two replay architectures under
//! comparison: device-resident (block scatter on add, zero-copy sample)
//! and host-resident (free add, one batch upload per sample).

use rand::Rng;

use crate::device::{Device, DeviceBuffer2D};
use crate::error::Result;
use crate::experience::{unpack_batch, Experience, UnpackedBatch};
use crate::replay::{HostReplay, ReplayBuffer, ReplayConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    /// Experiences live in host RAM; every sampled batch is uploaded.
    Host,
    /// Experiences live on the device; samples are gathered in place.
    Device,
}

impl ReplayMode {
    pub fn label(&self) -> &'static str {
        match self {
            ReplayMode::Host => "host-replay",
            ReplayMode::Device => "device-replay",
        }
    }
}

enum Inner {
    Device(ReplayBuffer),
    Host {
        replay: HostReplay,
        device: Device,
        /// Upload target for sampled batches, resized on batch change.
        staging: Option<DeviceBuffer2D>,
    },
}

/// Replay feeding a train step, in either mode, over one device whose
/// [`crate::device::TransferStats`] record exactly what the mode costs.
pub struct SamplePipeline {
    cfg: ReplayConfig,
    inner: Inner,
}

impl SamplePipeline {
    pub fn new(mode: ReplayMode, cfg: ReplayConfig, device: &Device) -> Result<Self> {
        let inner = match mode {
            ReplayMode::Device => Inner::Device(ReplayBuffer::new(cfg, device)?),
            ReplayMode::Host => {
                cfg.validate()?;
                Inner::Host {
                    replay: HostReplay::new(cfg.capacity, cfg.min_sample_size, cfg.layout)?,
                    device: device.clone(),
                    staging: None,
                }
            }
        };
        Ok(Self { cfg, inner })
    }

    pub fn mode(&self) -> ReplayMode {
        match self.inner {
            Inner::Device(_) => ReplayMode::Device,
            Inner::Host { .. } => ReplayMode::Host,
        }
    }

    pub fn add(&mut self, exp: Experience) -> Result<()> {
        match &mut self.inner {
            Inner::Device(buf) => buf.add(exp),
            Inner::Host { replay, .. } => replay.add(&exp),
        }
    }

    /// Force staged experiences out (device mode); host adds are
    /// immediate so this is a no-op there.
    pub fn flush(&mut self) -> Result<usize> {
        match &mut self.inner {
            Inner::Device(buf) => buf.flush(),
            Inner::Host { .. } => Ok(0),
        }
    }

    pub fn size(&self) -> usize {
        match &self.inner {
            Inner::Device(buf) => buf.size(),
            Inner::Host { replay, .. } => replay.size(),
        }
    }

    /// Sample a batch for training. In device mode the batch never
    /// leaves the device; in host mode the packed batch is scattered
    /// into a staging buffer (one transfer of `batch * row_width * 4`
    /// bytes) before it is unpacked device-side.
    pub fn sample(&mut self, batch_size: usize, rng: &mut impl Rng) -> Result<UnpackedBatch> {
        match &mut self.inner {
            Inner::Device(buf) => buf.sample(batch_size, rng),
            Inner::Host {
                replay,
                device,
                staging,
            } => {
                let rows = replay.sample_rows(batch_size, rng)?;
                let needs_alloc = staging
                    .as_ref()
                    .map_or(true, |s| s.rows() != batch_size);
                if needs_alloc {
                    *staging = Some(device.allocate(batch_size, self.cfg.layout.row_width())?);
                }
                let buf = staging.as_mut().unwrap();
                let indices: Vec<usize> = (0..batch_size).collect();
                buf.scatter_rows(&indices, &rows)?;
                let on_device = buf.gather_rows(&indices)?;
                unpack_batch(&on_device, &self.cfg.layout)
            }
        }
    }
}
