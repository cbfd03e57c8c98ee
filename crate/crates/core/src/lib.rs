//! Sequence-to-sequence address tagging with domain-adversarial training.

pub mod adversarial;
pub mod country;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod tagger;
pub mod tags;
pub mod training;

pub use error::{Error, Result};
pub use tags::{AddressSample, Tag, TagVocabulary};
