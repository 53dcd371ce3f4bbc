//! Unit-based generalized speech enhancement toolkit.
//!
//! Clean speech is synthesized from explicit generative factors, corrupted
//! with noise, interfering speakers, dropped spans or full silencing,
//! tokenized into discrete units, mapped back to units by a small enhancer
//! network, and resynthesized with a prototype vocoder.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod signal;

pub use error::{GseError, Result};
pub mod corruption;
pub mod rng;
pub mod beamformer;
pub mod corpus;
pub mod io;
pub mod tokenizer;
pub mod metrics;
pub mod model;
pub mod vocoder;
pub mod pipeline;
