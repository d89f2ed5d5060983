//! Core library for link prediction on temporal heterogeneous networks:
//! data ingestion, hierarchical attention encoders with contrastive
//! objectives, dual-channel temporal encoding, training, and evaluation.

pub mod config;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod params;
pub mod spatial;
pub mod synth;
pub mod tape;
pub mod temporal;
pub mod trainer;
pub mod warmstart;

pub use error::{ClpError, Result};
