//! Supervised clustering on KNN affinity graphs.
//!
//! A GCN regresses a confidence score for every vertex; a second GCN scores
//! how likely each vertex shares a class with its more-confident neighbors.
//! Every vertex then links to its best-ranked neighbor of higher confidence,
//! and the connected components of those links are the clusters.

pub mod confidence;
pub mod connectivity;
pub mod engine;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result, Stage};
