//! Link prediction by ranking knowledge-base entities against masked
//! language model logits.
//!
//! Each entity is scored by the mean logit of its own tokens over the mask
//! positions of a query prompt. Gold answers are ranked in the filtered
//! setting with randomized tie-breaking.

pub mod bench;
pub mod cli;
pub mod error;
pub mod eval;
pub mod kg;
pub mod prompt;
pub mod scoring;
pub mod tokenizer;

pub use error::{Error, Result};
