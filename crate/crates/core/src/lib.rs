//! Video feature sequences embedded into a word-vector space by a two-level
//! attentive LSTM, trained with a ranking + classification loss and
//! evaluated by zero-shot recognition, taxonomy rank correlation and
//! vector-arithmetic analogies.

pub mod error;
pub mod ndcore;

pub use error::{Error, Result};
pub mod datakit;
pub mod encoder;
pub mod evalkit;
pub mod objective;
pub mod seed;
pub mod trainer;
