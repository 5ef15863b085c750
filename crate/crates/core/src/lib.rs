//! Definition generation from words in any language sharing one subword
//! vocabulary.
//!
//! The crate covers the whole pipeline: a small f64 tensor core with
//! reverse-mode differentiation, a byte-level BPE tokenizer, dataset loading
//! and word-disjoint splitting, a transformer encoder-decoder that reads
//! `(headword, example sentence)` and emits a definition, a two-stage training
//! recipe, greedy/beam decoding, perplexity/BLEU evaluation, and lexical
//! complexity measurement.

pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod gradcheck;
pub mod graph;
pub mod lexcomplexity;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod wordlist;

pub use error::{Error, Result};
