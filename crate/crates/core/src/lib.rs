//! Partial-scan completion: scan paths, data pipeline, models, training and
//! evaluation.

pub mod dataset;
pub mod distance;
pub mod error;
pub mod eval;
pub mod filter;
pub mod image;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scanpath;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
pub use scanpath::{NoiseModel, PathKind, PathMask};
