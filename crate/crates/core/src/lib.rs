//! Differentiable multi-hop reasoning over relation graphs.
//!
//! A question is answered by starting from its topic entity with score 1 and
//! transferring entity scores across relations for a fixed number of steps.
//! At every step the model attends to part of the question, scores every
//! candidate relation against that query, and moves score mass along the
//! scored edges. The per-step attention, relation scores and entity scores
//! are kept as a [`reasoner::ReasoningTrace`], so every answer comes with the
//! path that produced it.
//!
//! Graphs come in three forms: label (predicate-edged knowledge graphs), text
//! (sentences with `<sub>`/`<obj>` placeholders extracted from a corpus) and
//! mixed (text plus predicates treated as one-word sentences).

pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod reasoner;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
