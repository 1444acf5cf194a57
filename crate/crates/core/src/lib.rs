//! Few-shot named entity and relation extraction with code-style prompts.
//!
//! The pipeline: load a [`corpus::Dataset`], draw a k-shot demonstration set,
//! render demonstrations and the test input in one of six [`PromptDesign`]s,
//! ask a completion backend to continue the prompt, parse the continuation back
//! into structures, and score it.

pub mod backend;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod orchestrator;
pub mod parse;
pub mod prompt;

pub use model::{EntityMention, IESample, PromptDesign, PromptStyle, RelationTriple, Schema, TaskKind, TokenSpan};

/// `git describe` of the source tree this build came from.
pub const HARNESS_VERSION: &str = env!("CODEIE_GIT_DESCRIBE");
