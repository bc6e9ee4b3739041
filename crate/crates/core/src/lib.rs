pub mod config;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod recon;
pub mod synth;
mod types;

pub use types::{CameraId, MaskletId, Modality, ObjectId};
