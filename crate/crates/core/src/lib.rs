//! Panel climate-econometrics engine: station cleaning, seasonal anomalies,
//! growth panels, mixed-model estimation with cluster-robust inference,
//! scenario projection and province block bootstrap.

pub mod boot;
pub mod error;
pub mod estimate;
pub mod features;
pub mod infer;
pub mod ingest;
pub mod panel;
pub mod pipeline;
pub mod project;
pub mod stats;
pub mod store;
pub mod synth;
pub mod textio;
pub mod types;

pub use error::{Error, Result};
