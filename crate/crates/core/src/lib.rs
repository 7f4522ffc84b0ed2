//! Trace research concepts stated in a paper to the code blocks that
//! implement them.
//!
//! The pipeline runs in fixed stages:
//!
//! 1. [`ingest`] acquires a repository snapshot and the paper text.
//! 2. [`segment`] splits source files into code blocks (file, class,
//!    function, notebook cell, line group).
//! 3. [`chunker`] packs leaf blocks into budget-bounded chunks.
//! 4. [`nlr`] turns every leaf block into a short natural-language summary.
//! 5. [`concepts`] extracts research concepts with verifiable anchor quotes.
//! 6. [`tracemap`] links concepts to blocks and derives both orphan sets.
//! 7. [`report`] writes the artifact bundle and the Markdown report.
//!
//! Every generation step goes through [`backend::GenerationBackend`]. The
//! lexical backend is deterministic and offline; the remote backend talks to
//! any chat-completions endpoint.

pub mod backend;
pub mod chunker;
pub mod concepts;
pub mod config;
pub mod digest;
pub mod ingest;
pub mod nlr;
pub mod pipeline;
pub mod report;
pub mod segment;
pub mod text;
pub mod tracemap;

/// Version recorded in every run manifest.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Version of the artifact file layout, bumped whenever a documented key order changes.
pub const SCHEMA_VERSION: u32 = 1;
