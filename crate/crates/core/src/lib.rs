//! Voxel-wise porosity analysis for X-CT volumes.

pub mod degrade;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod labeler;
pub mod patchflow;
pub mod postproc;
pub mod scalar;
pub mod scorer;
pub mod volgrid;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use volgrid::{Histogram, Mask, Volume};

pub type Volume32 = Volume<f32>;
pub type Volume64 = Volume<f64>;
