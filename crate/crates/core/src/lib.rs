//! Vector-quantized autoencoders with tooling for information-theoretic
//! generalization bounds: training, resampling protocols, information
//! estimators, bound evaluators and exact optimal transport.

pub mod bounds;
pub mod config;
pub mod datasets;
pub mod diffcore;
pub mod experiments;
pub mod error;
pub mod infotools;
pub mod model;
pub mod quantizer;
pub mod resampling;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
