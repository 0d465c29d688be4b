//! Character-level probing of subword-token embeddings.
//!
//! The crate trains small binary probes that predict whether a token's
//! surface contains a given character (or whether one token is a substring
//! of another) from its frozen embedding, compares them to random-embedding
//! controls and syntax-only baselines, and provides the tooling for the
//! tokenization-variability study: a byte-level BPE tokenizer with a
//! controllable random-split wrapper, a CBOW trainer, and a fuzzy corpus
//! scanner counting how many distinct tokenizations a word receives.

pub mod bpe;
pub mod cbow;
pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod neural;
pub mod probe;
pub mod rng;
pub mod syntax;
pub mod vocab;
