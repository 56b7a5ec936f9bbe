//! Domain-adaptive person re-identification for target domains that contain
//! no cross-camera positive pairs (single-camera training, SCT).
//!
//! The crate is organised by pipeline stage:
//!
//! - [`datasets`]: JSON-lines manifests, the SCT invariant, a synthetic SCT generator and PK batch sampling.
//! - [`encoder`]: the feature extractor (global + local tokens), linear classifiers and the
//!   pre-training losses.
//! - [`cscm`]: classifier-driven channel recombination and the interactive promotion losses.
//! - [`ccflm`]: instance-level style alignment and cluster-based identity consistency.
//! - [`trainer`]: the staged optimiser, learning-rate schedule and checkpoints.
//! - [`evaluation`]: Euclidean retrieval with single-query CMC and mAP.
//! - [`experiments`]: the component ablation and the cluster-count sweep.
//!
//! Every loss returns its value together with analytic gradients; all numerics are `f64`.

pub mod ccflm;
pub mod config;
pub mod cscm;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod math;
pub mod parallel;
pub mod params;
pub mod trainer;

pub use error::{Error, Result};
