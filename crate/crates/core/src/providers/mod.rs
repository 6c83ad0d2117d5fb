//! Model provider contracts.
//!
//! The pipeline talks to three kinds of models: an [`Embedder`] that maps text
//! to unit vectors, a [`Generator`] that completes prompts, and a [`Reranker`]
//! that scores (text, document) relevance. Deterministic mocks live in
//! [`mock`]; HTTP-backed clients for OpenAI-compatible servers live in [`http`].

use crate::error::{Error, Result};
use crate::geometry::EmbeddingVector;

pub mod http;
pub mod mock;
pub mod spec;

pub use http::{HttpConfig, HttpEmbedder, HttpGenerator, HttpReranker};
pub use mock::{
    FnGenerator, FnReranker, HashEmbedder, OverlapReranker, StaticEmbedder, TableGenerator,
    TableRule, TokenHashEmbedder,
};
pub use spec::ProviderSpec;

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Embeds a batch. Implementations return one unit vector per input, in order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed(&[text])?;
        out.pop()
            .ok_or_else(|| Error::InvalidInput("embedder returned no vectors".into()))
    }
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String>;
}

pub trait Reranker: Send + Sync {
    fn id(&self) -> &str;

    /// Relevance of `document` to `query`. The scale is model-specific.
    fn score(&self, query: &str, document: &str) -> Result<f64>;

    fn score_batch(&self, query: &str, documents: &[&str]) -> Result<Vec<f64>> {
        documents.iter().map(|d| self.score(query, d)).collect()
    }
}

/// Checks an embedder's output against its declared contract.
pub(crate) fn check_embeddings(
    embedder_id: &str,
    dimension: usize,
    expected: usize,
    vectors: &[EmbeddingVector],
) -> Result<()> {
    if vectors.len() != expected {
        return Err(Error::Protocol {
            endpoint: embedder_id.to_string(),
            message: format!("expected {expected} embeddings, got {}", vectors.len()),
        });
    }
    if let Some(bad) = vectors.iter().find(|v| v.dim() != dimension) {
        return Err(Error::Protocol {
            endpoint: embedder_id.to_string(),
            message: format!("expected dimension {dimension}, got {}", bad.dim()),
        });
    }
    Ok(())
}
