//! Deterministic in-process providers for tests, demos and the CLI.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedder, Generator, Reranker};
use crate::error::{Error, Result};
use crate::eval::{normalize_answer, token_f1};
use crate::geometry::EmbeddingVector;

/// Gaussian vector seeded from SHA-256 of `(domain, seed, text)`. Stable across
/// processes and platforms.
fn hashed_gaussian(domain: &[u8], seed: u64, text: &str, dimension: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(domain);
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..dimension)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

fn check_dimension(dimension: usize) -> Result<()> {
    if dimension < 2 {
        return Err(Error::Config(format!(
            "mock embedder dimension must be at least 2, got {dimension}"
        )));
    }
    Ok(())
}

/// Maps each whole text to a pseudo-random unit vector.
///
/// Different texts land on unrelated directions, so similarity carries no
/// meaning beyond identity.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        check_dimension(dimension)?;
        Ok(Self {
            id: format!("hash:{dimension}:{seed}"),
            dimension,
            seed,
        })
    }

    fn vector(&self, text: &str) -> EmbeddingVector {
        let raw = hashed_gaussian(b"text", self.seed, text, self.dimension);
        // A Gaussian draw of dimension >= 2 is never exactly zero.
        EmbeddingVector::normalize(&raw).expect("gaussian draw is nonzero")
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Bag-of-words embedder: the normalized sum of one hashed Gaussian vector per
/// lowercase alphanumeric token (with multiplicity).
///
/// Texts sharing words get correlated embeddings, which makes it usable for
/// small end-to-end retrieval demos without a real model. Texts with no tokens
/// fall back to the whole-text hash.
#[derive(Debug, Clone)]
pub struct TokenHashEmbedder {
    id: String,
    dimension: usize,
    seed: u64,
}

impl TokenHashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        check_dimension(dimension)?;
        Ok(Self {
            id: format!("bow:{dimension}:{seed}"),
            dimension,
            seed,
        })
    }

    fn vector(&self, text: &str) -> EmbeddingVector {
        let lower = text.to_lowercase();
        let mut acc = vec![0.0; self.dimension];
        let mut any = false;
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            any = true;
            let tv = hashed_gaussian(b"token", self.seed, token, self.dimension);
            let norm = tv.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (a, x) in acc.iter_mut().zip(&tv) {
                *a += x / norm;
            }
        }
        if !any {
            acc = hashed_gaussian(b"text", self.seed, text, self.dimension);
        }
        EmbeddingVector::normalize(&acc).unwrap_or_else(|_| {
            let raw = hashed_gaussian(b"text", self.seed, text, self.dimension);
            EmbeddingVector::normalize(&raw).expect("gaussian draw is nonzero")
        })
    }
}

impl Embedder for TokenHashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Explicit text → vector table with a hash fallback for unknown texts.
#[derive(Debug, Clone)]
pub struct StaticEmbedder {
    id: String,
    table: HashMap<String, EmbeddingVector>,
    fallback: HashEmbedder,
}

impl StaticEmbedder {
    /// Entries are normalized on insertion; all must share one dimension.
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = HashMap::new();
        let mut dimension = None;
        for (text, raw) in entries {
            let v = EmbeddingVector::normalize(&raw)?;
            match dimension {
                None => dimension = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(Error::InvalidInput(format!(
                        "static embedder entries disagree on dimension: {d} vs {}",
                        v.dim()
                    )))
                }
                _ => {}
            }
            table.insert(text.into(), v);
        }
        let dimension =
            dimension.ok_or_else(|| Error::InvalidInput("static embedder needs entries".into()))?;
        Ok(Self {
            id: format!("static:{dimension}"),
            table,
            fallback: HashEmbedder::new(dimension, 0)?,
        })
    }
}

impl Embedder for StaticEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.fallback.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .unwrap_or_else(|| self.fallback.vector(t))
            })
            .collect())
    }
}

/// Substrings a rule requires. A single string or a list; every entry must
/// occur in the prompt for the rule to fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pattern {
    One(String),
    All(Vec<String>),
}

impl Pattern {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Pattern::One(s) => prompt.contains(s.as_str()),
            Pattern::All(all) => all.iter().all(|s| prompt.contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRule {
    pub contains: Pattern,
    pub completion: String,
}

impl TableRule {
    pub fn new(contains: impl Into<String>, completion: impl Into<String>) -> Self {
        Self {
            contains: Pattern::One(contains.into()),
            completion: completion.into(),
        }
    }

    pub fn all<I, S>(contains: I, completion: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            contains: Pattern::All(contains.into_iter().map(Into::into).collect()),
            completion: completion.into(),
        }
    }
}

/// Scripted generator: the first rule (in declaration order) whose pattern
/// occurs in the prompt supplies the completion, else `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGenerator {
    pub rules: Vec<TableRule>,
    #[serde(default)]
    pub default: String,
}

impl TableGenerator {
    pub fn new(rules: Vec<TableRule>, default: impl Into<String>) -> Self {
        Self {
            rules,
            default: default.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid generator table: {e}")))
    }
}

impl Generator for TableGenerator {
    fn id(&self) -> &str {
        "table"
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        Ok(self
            .rules
            .iter()
            .find(|r| r.contains.matches(prompt))
            .map_or_else(|| self.default.clone(), |r| r.completion.clone()))
    }
}

/// Generator backed by a closure.
pub struct FnGenerator<F> {
    id: String,
    f: F,
}

impl<F> FnGenerator<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Generator for FnGenerator<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        (self.f)(prompt)
    }
}

/// Scores pairs by token-level F1 of their normalized forms.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapReranker;

impl Reranker for OverlapReranker {
    fn id(&self) -> &str {
        "overlap"
    }

    fn score(&self, query: &str, document: &str) -> Result<f64> {
        Ok(token_f1(&normalize_answer(query), &normalize_answer(document)))
    }
}

/// Reranker backed by a closure.
pub struct FnReranker<F> {
    id: String,
    f: F,
}

impl<F> FnReranker<F>
where
    F: Fn(&str, &str) -> Result<f64> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Reranker for FnReranker<F>
where
    F: Fn(&str, &str) -> Result<f64> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, query: &str, document: &str) -> Result<f64> {
        (self.f)(query, document)
    }
}
