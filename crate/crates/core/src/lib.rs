//! Segment-level incremental sequence segmentation.
//!
//! An encoder turns a sentence into contextual states from which any span's
//! representation is available in constant time; a decoder then repeatedly
//! picks the leftmost segment of the unsegmented remainder.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
