//! Attention-based multichannel CNN for sentence classification.
//!
//! A bi-directional LSTM encodes the sentence; several attention channels
//! re-weight its hidden states (scalar attention from a masked word-word
//! association matrix, vectorial attention per hidden dimension, or both);
//! a multichannel convolution with max-over-time pooling and a softmax head
//! classify the result. Everything runs on a small reverse-mode tape over
//! dense `f64` tensors, so every gradient can be checked against finite
//! differences.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelParams};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
