//! Cross-network preference generation and time-aware Top-N recommendation.
//!
//! A target-network encoder, a source-network encoder, a pair discriminator
//! and a generator learn to map a user's target-network topical preferences
//! onto the source network. The generated source encodings feed a Siamese
//! recommender trained with a user-based pairwise ranking loss, so users with
//! no source-network account still benefit from cross-network signals.

pub mod data;
pub mod generator;
pub mod model;
pub mod error;
pub mod eval;
pub mod nn;
pub mod recommender;
pub mod train;

pub use error::{Error, Result};
