//! Person identification in web-archive image corpora via face embeddings.
//!
//! The pipeline selects persons of interest from a knowledge base, gathers and
//! cleanses sample faces into a dictionary of mean embeddings, calibrates
//! verification thresholds, identifies dictionary persons in a constrained
//! archive corpus and counts how often they appear alone and together.

pub mod calibration;
pub mod cooccurrence;
pub mod demo;
pub mod dictionary;
pub mod embedding;
pub mod embedding_manifest;
pub mod entity_source;
pub mod error;
pub mod identification;
pub mod ingestion;
pub mod loss;
pub mod persist;
pub mod pipeline;
pub mod provider;
pub mod synthetic;
pub mod toy;
pub mod workspace;

pub use error::{Error, Result};
