//! Sparse graph descriptors for object matching and relocalization.
//!
//! An object observation is a set of key-points (2-D position plus an
//! appearance descriptor) inside a bounding box. The encoder embeds each
//! key-point, propagates information over a fully connected attention graph,
//! pushes the result through a dual-branch sparsity layer, and aggregates the
//! element-wise product of the two branches into a single fixed-width,
//! L2-normalized object descriptor. Descriptors are compared by cosine
//! similarity for object matching and frame relocalization.
//!
//! The crate is CPU-only, single-threaded, and deterministic: a run is a pure
//! function of its configuration (including the seed). All floating point is
//! f64 except the on-disk descriptor store, which holds f32.

pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod matcher;
pub mod model;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
