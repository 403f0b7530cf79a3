//! File formats, CSV reports and the end-to-end pipeline around
//! [`tinyicenet_core`].

mod bytes;
pub mod checkpoint;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod scene_file;

pub use checkpoint::{Checkpoint, CheckpointModel, TrainingMeta};
pub use error::{Error, Result};
pub use tinyicenet_core as core;
