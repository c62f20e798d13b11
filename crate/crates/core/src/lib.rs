//! Contrastive audio-video embedding alignment and a conditional VAE goal
//! prior, built on a small dense-network toolkit with explicit backward
//! passes.

pub mod checkpoint;
pub mod cli;
pub mod clip;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod nn;
pub mod prior;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
