//! Inference of sparse optical transmission matrices from intensity
//! measurements via pseudolikelihood maximization and decimation.

pub mod datagen;
pub mod decimation;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod pseudolikelihood;
pub mod reduce;
pub mod special;

pub use error::{Error, Result};
pub use model::{CouplingMatrix, IntensitySample, SampleSet, TransmissionSpec};
pub use pseudolikelihood::FVariant;
