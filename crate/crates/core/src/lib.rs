//! Corpus building, tokenization, a byte-level decoder-only language model,
//! and the recognition, anomaly and generation evaluations built on it.

pub mod anomaly;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hash;
pub mod lm;
pub mod seed;
pub mod tokenizer;

pub use error::{Error, Result};
