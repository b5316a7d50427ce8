//! File formats: key-point JSON lines, binary descriptor stores, model
//! checkpoints, and the run configuration.
//!
//! Byte-level decoders (`*_from_slice`, [`RunConfig::from_toml_str`]) accept
//! arbitrary untrusted input and fail with parse errors instead of panicking
//! or over-allocating.

mod checkpoint;
mod config;
mod keypoints;
mod store;

pub use checkpoint::{
    checkpoint_from_slice, checkpoint_to_bytes, read_checkpoint, write_checkpoint,
    CHECKPOINT_FORMAT_VERSION,
};
pub use config::{EvalSettings, RunConfig};
pub use keypoints::{
    keypoints_from_slice, keypoints_to_bytes, read_keypoints, write_keypoints, KeypointFile,
    KEYPOINT_FORMAT_VERSION,
};
pub use store::{
    read_descriptor_store, store_from_slice, store_to_bytes, write_descriptor_store,
    STORE_FORMAT_VERSION,
};
