//! Conversational search toolkit.
//!
//! The pipeline enhances a conversation history with a chat model, rewrites
//! the current question into a stand-alone search query, retrieves passages
//! with BM25 or exact dense search, optionally fuses two runs, and evaluates
//! the result against TREC qrels. A pseudo-supervision stage turns the same
//! machinery into a training set for a small query rewriter.
//!
//! Every stage reads and writes plain files (json-lines or TREC text), so the
//! [`cli`] subcommands can be chained or replaced by external tools.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod enhance;
pub mod error;
pub mod fusion;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod retrieval;
pub mod rewrite;
pub mod supervision;
pub mod text;

pub use error::{Error, Result};
