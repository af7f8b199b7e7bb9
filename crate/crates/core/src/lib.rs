//! Click-log curation, aggregation and relevance pseudo-labeling, with ranking
//! evaluation, scoring kernels and a position-bias click simulator.

pub mod aggregation;
pub mod curation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod labeling;
pub mod sampling;
pub mod scoring;
pub mod seed;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
