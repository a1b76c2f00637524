//! Word surprisal, wavelet-based prominence and prosody statistics for
//! read-speech corpora.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod fmt;
pub mod givenness;
pub mod kv;
pub mod lm;
pub mod pipeline;
pub mod prominence;
pub mod stats;
pub mod surprisal;
pub mod synth_eval;
pub mod text;

pub use error::{Error, Result};
