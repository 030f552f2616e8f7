//! Knowledge-enriched empathetic dialogue generation.
//!
//! Dialogue histories are enriched with emotion-related commonsense concepts
//! and turned into a context graph, encoded by graph attention plus global
//! transformer layers, and decoded by a transformer decoder whose
//! cross-attention is mixed with an emotion context vector and whose output
//! distribution can copy graph nodes.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod knowledge;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
