//! Core of the interactive reasoning pipeline: the editable reasoning tree,
//! the tag parser, model-backed reasoning operators, provider clients and the
//! per-session orchestration engine.

pub mod chain;
pub mod engine;
pub mod operators;
pub mod prompts;
pub mod script;
pub mod providers;
pub mod session;
pub mod text;
