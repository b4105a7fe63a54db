//! Concept extraction from scientific papers with LLMs: ingest, question
//! registry, prompting, completion, parsing, evidence alignment and
//! benchmark scoring.

pub mod alignment;
pub mod cache;
pub mod config;
pub mod evaluation;
pub mod ingest;
pub mod llm_client;
pub mod parsing;
pub mod pipeline;
pub mod prompting;
pub mod records;
pub mod registry;
pub mod text;
