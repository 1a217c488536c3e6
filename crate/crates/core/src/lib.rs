//! Weakly-supervised alignment of questionnaire questions to interview audio.
//!
//! Speech chunks are encoded by a small conv + projection + self-attention
//! head trained contrastively against Gaussian mixtures of the question
//! embeddings of each annotated segment. At inference, fixed windows of
//! chunks are ranked per question by their best chunk score.

pub mod bench;
pub mod corpus;
pub mod error;
pub mod gaussian;
pub mod head;
pub mod index;
pub mod providers;
pub mod retrieval;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
