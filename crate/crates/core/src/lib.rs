//! Face clustering on clean k-nearest-neighbour graphs.

pub mod cluster;
pub mod config;
pub mod data;
pub mod discovery;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod knn;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod structspace;

pub use config::PipelineConfig;
pub use error::{Error, Result};
