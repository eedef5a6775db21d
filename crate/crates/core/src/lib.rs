//! Speech MOS prediction benchmark: data handling, mel features, the five
//! predictor architectures, training, evaluation and statistics.

pub mod analysis;
pub mod audio;
pub mod config;
pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
