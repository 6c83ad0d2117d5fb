//! Retrieval-augmented question answering with an agreement gate.
//!
//! The pipeline first asks the generator to answer directly and again from a
//! self-generated pseudo-context. When both answers agree, the direct answer is
//! returned and the retriever is never touched. Otherwise the question and the
//! pseudo-context each probe the index, the union of both hit lists is
//! re-scored by how well each document aligns with *both* probes, and the
//! best documents are handed back to the generator.
//!
//! Modules:
//!
//! - [`geometry`]: similarity, angle and weighting math.
//! - [`index`]: chunk ingestion, exact inner-product search, persistence.
//! - [`selection`]: dual-path retrieval and the document scorers.
//! - [`gate`]: prompts, the agreement gate and pipeline orchestration.
//! - [`providers`]: embedder / generator / reranker contracts, mocks, HTTP clients.
//! - [`eval`]: EM/F1 metrics, run reports, angle analysis.
//! - [`cli`]: the `gatedrag` command-line surface.

pub mod cli;
pub mod error;
pub mod eval;
pub mod gate;
pub mod geometry;
pub mod index;
pub mod providers;
pub mod selection;

pub use error::{Error, Result};
pub use geometry::{AlphaModel, AngleSample, EmbeddingVector};
pub use index::{Chunk, ChunkingPolicy, Retriever, ScoredHit, VectorIndex};
pub use selection::{Candidate, Scorer, SelectionConfig};
