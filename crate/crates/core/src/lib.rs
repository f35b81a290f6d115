//! Small-target motion detection.
//!
//! A retina/lamina front end feeds two families of detectors: classical
//! delay-and-correlate models (HR, BL, HR/BL, ESTMD, DSTMD) and the
//! dual-dynamics STMDNet with a shared directional code and optional
//! feedback. Synthetic sequence generation and evaluation metrics round out
//! the crate.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod frontend;
pub mod io;
pub mod ops;
pub mod pixelgrid;
pub mod stmdnet;
pub mod synthgen;

pub use config::PipelineConfig;
pub use detector::{Detector, DetectorKind, DetectorOutput};
pub use error::{Result, StmdError};
pub use pixelgrid::{Grid2D, Kernel1D};
