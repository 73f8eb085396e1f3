//! Sensor-aware early-exit (SEE) classifiers for windowed time-series data.
//!
//! Classifiers normally wait for a full sensor window before predicting,
//! keeping sensors powered for the whole segment. The types here instead
//! attach intermediate exits that consume growing prefixes of the window:
//! when an exit's softmax entropy falls below its threshold, the label is
//! returned and no further samples are requested, so sensors can shut down
//! for the rest of the segment.
//!
//! The crate provides:
//!
//! * [`kernel`] - dense f64 forward/backward kernels (1-D conv, max pool,
//!   ReLU, dense, softmax, cross-entropy) and the Adam optimizer;
//! * [`model`] - the multi-exit CNN with late-input blocks and staged
//!   execution over partial windows;
//! * [`trainer`] - weighted multi-exit loss training;
//! * [`inference`] - entropy-gated staged inference with per-segment traces
//!   and a sensor-shutdown contract (slices are pulled on demand);
//! * [`forest`] - a cascaded random-forest variant over growing prefixes;
//! * [`energy`] - accuracy / energy-ratio / memory accounting over traces;
//! * [`dse`] - grid design-space exploration with Pareto fronts;
//! * [`dataset`] - CSV ingestion, splitting, hold-last imputation, and a
//!   synthetic generator with prefix-separable and late-pattern classes.

pub mod dataset;
pub mod dse;
pub mod energy;
pub mod error;
pub mod forest;
pub mod inference;
pub mod kernel;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
