//! Retrieval-grounded social norm classification for multi-turn dialogue.
//!
//! The pipeline chunks norm documentation by embedding similarity, describes
//! both chunks and dialogue windows with four pragmatic attributes, retrieves
//! and re-ranks chunks per turn, and classifies each turn with an LLM while
//! threading a feedback signal from one turn to the next.

pub mod agent;
pub mod attributes;
pub mod chunker;
#[cfg(feature = "cli")]
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod parallel;
pub mod prompts;
pub mod retrieval;
pub mod providers;

pub use error::{Error, Result};
