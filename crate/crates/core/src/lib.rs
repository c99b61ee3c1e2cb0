//! Image-seeking intent prediction.
//!
//! Given a transcribed voice query, its intent label and the top-k products
//! retrieved for it, predict the probability that the user needs to see
//! product images. The crate contains the whole pipeline: data types and
//! corpus I/O, text preprocessing, product summarization (field-wise mean
//! aggregation or MMR token selection), a small reverse-mode autodiff engine
//! with AdamW, a compact transformer classifier, precision-oriented training
//! objectives, a synthetic proxy-label generator with an exact Bayes oracle,
//! and the checkpoint, CLI and HTTP surfaces.

pub mod checkpoint;
pub mod cli;
pub mod domain;
pub mod error;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod service;
pub mod summarize;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
