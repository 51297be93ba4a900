//! Device-resident experience replay with block-batched ingestion,
//! on-device uniform sampling, exact host<->device byte accounting, and
//! a dueling DQN trainer that consumes samples without copying them back
//! across the boundary.

pub mod bench;
pub mod device;
pub mod dueling;
pub mod env;
pub mod error;
pub mod experience;
pub mod io;
pub mod mat;
pub mod pipeline;
pub mod replay;
pub mod verify;
pub mod train;

pub use device::{CostModel, Device, DeviceBuffer2D, Timing, TransferStats};
pub use error::{Error, Result};
pub use experience::{Experience, PackedRow, RowLayout, UnpackedBatch};
pub use mat::Mat;
pub use pipeline::{ReplayMode, SamplePipeline};
pub use replay::{HostReplay, ReplayBuffer, ReplayConfig};
