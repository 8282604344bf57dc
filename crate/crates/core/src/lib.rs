//! Weekly wearable-sensor screening pipeline: ingestion, preprocessing,
//! windowed aggregation, weekly segmentation, statistical features, from-scratch
//! classifiers, nested leave-one-participant-out evaluation and reporting.

pub mod aggregate;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod segment;
pub mod synth;
pub mod tune_select;

pub use scalar::Scalar;

/// Scalar used by the end-to-end pipeline.
pub type Real = f64;
