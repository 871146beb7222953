//! Structured-prediction toolkit for BMES sequence labeling.
//!
//! The crate turns per-token logits (from any encoder) into well-formed
//! label sequences. It provides:
//!
//! - [`labelspace`]: BMES label vocabularies and the transition-constraint matrix.
//! - [`decode`]: argmax, logits-constrained greedy, and constrained Viterbi decoders.
//! - [`crf`]: a linear-chain CRF (forward algorithm, exact gradients, training).
//! - [`emission`]: a feature-hashing encoder with a linear projection to logits.
//! - [`corpus`]: sentence segmentation, column-file I/O, entity extraction, scoring,
//!   relabeling and synthetic corpora.
//! - [`advisor`]: the label-cardinality / corpus-size model selection rule.
//! - [`grid`]: the baseline / lc / crf / crf+lc comparison harness.

pub mod advisor;
pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod decode;
pub mod emission;
mod error;
pub mod grid;
pub mod labelspace;

pub use error::{Error, Result};
