//! Contrast- and resolution-agnostic claustrum segmentation toolkit.
//!
//! The crate covers the full pipeline at desk scale: training-label
//! preparation, on-the-fly synthetic image generation, a trainable 3D U-Net,
//! probabilistic-atlas FoV cropping, a registration-free QC score, and the
//! evaluation metric suite. Everything is deterministic in (inputs, seed).

pub mod atlas;
pub mod config;
pub mod error;
pub mod geometry;
pub mod labels;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod resample;
pub mod synth;
pub mod rng;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::Geometry;
pub use volume::{BinaryMask, LabelVolume, Side, Volume};
