//! Lung-severity scoring for chest radiographs.
//!
//! The crate covers the whole pipeline: score algebra and rater agreement
//! ([`scoring`]), image records and preprocessing ([`dataset`]), training-time
//! augmentation ([`augment`]), a small PEPX regression network with its own
//! reverse-mode differentiation ([`nn`]), and stratified Monte Carlo
//! cross-validation ([`eval`]). [`config::ExperimentConfig`] ties the blocks
//! together for the `cxrs` command-line tool.
//!
//! ```
//! use cxr_severity::scoring::{normalize, TargetKind};
//!
//! let s = normalize(6, TargetKind::Geographic)?;
//! assert_eq!(s.value(), 0.75);
//! assert_eq!(s.denormalize(), 6.0);
//! # Ok::<(), cxr_severity::Error>(())
//! ```

pub mod augment;
pub mod config;
pub mod dataset;
mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod raster;
pub mod scoring;
pub mod seed;

pub use error::{Error, Result};
