//! Full-reference image quality assessment with adaptive quality factors
//! responding in a learnable dictionary space.
//!
//! The pipeline extracts deep spatial features from a reference/distorted
//! image pair, decomposes them into luminance, contrast and structure
//! factors, projects each factor onto a learnable visual-word dictionary,
//! and scores the pair by cosine similarity of the pooled response vectors.
//! Training couples the score regression with a single-channel
//! reconstruction constraint and a feature decorrelation penalty.
//!
//! See the `examples/` directory for one runnable program per capability
//! and the `amqf` binary for the command-line surface.

pub mod adapter;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dictionary;
pub mod encoder;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod ops;
pub mod plot;
pub mod reconstructor;
pub mod rng;
pub mod store;
pub mod training;

pub use error::{AmqfError, Result};
