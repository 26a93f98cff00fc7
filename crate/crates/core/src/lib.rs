//! Semantic-relevance sequence-to-sequence models.
//!
//! A self-gated LSTM encoder and an attention LSTM decoder are trained with
//! token negative log-likelihood minus a weighted cosine similarity between a
//! source vector (the last gated encoder state) and a target vector (the last
//! combined decoder state minus that encoder state). The crate also carries
//! the data preparation, greedy decoding and ROUGE/BLEU scoring needed around
//! the model.

pub mod data;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
