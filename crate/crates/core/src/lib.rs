//! Post-hoc calibration for graph neural network node classifiers.
//!
//! The crate bundles a similarity-aware nodewise-temperature calibrator
//! ([`simcalib`]), reference calibrators ([`baselines`]), calibration
//! metrics ([`metrics`]), a small GCN classifier to produce logits to
//! calibrate ([`classifier`]), a CSBM graph generator ([`datagen`]) and a
//! Monte Carlo laboratory for the two-node Gaussian model ([`theory`]).

pub mod baselines;
pub mod classifier;
pub mod datagen;
pub mod error;
pub mod fitting;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod simcalib;
pub mod theory;

pub use datagen::{gen_csbm, CsbmParams, CsbmSample, Masks};
pub use error::{Error, Result};
pub use graph::{Graph, StructuralProfile};
