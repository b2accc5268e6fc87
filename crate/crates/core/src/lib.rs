//! Data-engineering toolkit for long-context LLM training runs.
//!
//! The crate covers the data side of a context-length extension recipe:
//!
//! - [`store`]: tokenized document store with random access by content id
//! - [`pack`]: fixed-length sequence packing with per-document attention
//!   boundaries (short concat-truncate, long filter/segment, 64K-into-256K
//!   nesting, SFT pack-and-pad)
//! - [`mixture`]: declarative source mixtures realized into packed datasets
//!   with stage-exclusive document splits
//! - [`batch`]: microbatch scheduling sorted by attention cost
//! - [`rope`]: RoPE base-frequency extension for context-length targets
//! - [`mathgen`]: template DSL for expanding math word problems with exact
//!   rational answers
//! - [`longqa`]: synthetic long-context QA assembly with a pluggable
//!   teacher client
//! - [`ensemble`]: checkpoint weight averaging across seed runs
//!
//! Everything stochastic is keyed through [`rng::keyed_rng`], so outputs are
//! byte-reproducible for a given (input, seed) pair regardless of worker
//! count or traversal order.

pub mod batch;
pub mod ensemble;
pub mod error;
pub mod hash;
pub mod longqa;
pub mod manifest;
pub mod mathgen;
pub mod mixture;
pub mod pack;
pub mod recipe;
pub mod rng;
pub mod rope;
pub mod store;
pub mod tokenizer;

pub use error::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;
