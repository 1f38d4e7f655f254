//! No-reference point cloud quality assessment.
//!
//! The pipeline normalizes a cloud, extracts key clusters with a high-pass
//! graph filter ([`kce`]), runs them through an attention-augmented
//! set-abstraction network ([`nn`]) and trains that network in two steps:
//! coarse quality-level classification, then MOS regression initialized from
//! the classifier's feature extractor ([`train`]).

pub mod cloud;
pub mod distortion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kce;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod settings;
pub mod train;

pub use error::{Error, Result};
