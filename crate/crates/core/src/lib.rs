//! Long-context training data pipeline.
//!
//! The crate turns tokenized corpora into fixed-length training sequences and
//! optimizer-step plans:
//!
//! - [`corpus`]: ingestion, repository concatenation and length census
//! - [`packer`]: short/long/SFT packing with document-boundary metadata
//! - [`mixer`]: stage-wise domain mixtures with seeded sampling
//! - [`scheduler`]: attention cost model and minibatch reordering
//! - [`trainmath`]: RoPE base scaling and token-averaged loss
//! - [`synthgen`]: synthetic QA / RAG / summarization SFT examples
//! - [`evalgen`]: JSON key-value recall and class-balanced ICL tasks
//!
//! [`shard`] and [`manifest`] hold the on-disk formats shared by the CLI.

pub mod corpus;
pub mod error;
pub mod evalgen;
pub mod manifest;
pub mod mixer;
pub mod packer;
pub mod presets;
pub mod rng;
pub mod scheduler;
pub mod shard;
pub mod synthgen;
pub mod tokenizer;
pub mod trainmath;

pub use error::{Error, Result};

/// Token id as stored in shards.
pub type TokenId = u32;
