//! Zero-shot classification over precomputed text and image embeddings,
//! with class-independent random descriptors, LLM-derived concepts and the
//! ablations around them.

pub mod classify;
pub mod concepts;
pub mod corpus;
pub mod embedstore;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prompts;
pub mod rng;
pub mod wafflegen;

pub use error::{Error, Result};
