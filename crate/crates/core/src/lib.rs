//! Memory-augmented meta-learning for cold-start rating prediction.
//!
//! Per-user recommenders are initialised from a shared set of parameters,
//! personalised through a profile-keyed feature memory and a task memory
//! of fast weights, adapted on a few support ratings, and meta-trained on
//! the query ratings.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod memory;
pub mod meta;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
