//! Dual-path retrieval and candidate selection.
//!
//! The question embedding and the pseudo-context embedding each probe the
//! index for their top `n` chunks. The union of both hit lists is then scored
//! and the best `k` chunks are kept.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    additive_score, ais_score, angle, dynamic_angle, inner_product, AlphaModel, EmbeddingVector,
};
use crate::index::{rank_order, Retriever};
use crate::providers::Reranker;

/// A retrieved chunk with its similarity to both probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub text: String,
    /// Similarity to the question embedding.
    pub s1: f64,
    /// Similarity to the pseudo-context embedding.
    pub s2: f64,
    pub score: f64,
}

impl Candidate {
    /// An unscored candidate.
    pub fn new(chunk_id: impl Into<String>, text: impl Into<String>, s1: f64, s2: f64) -> Self {
        Self {
            chunk_id: chunk_id.into(),
            text: text.into(),
            s1,
            s2,
            score: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// `cos(θ₁ + θ₂)`.
    #[default]
    Ais,
    /// `s₁ + s₂`.
    Additive,
    /// Ascending `α·θ₁ + (1−α)·θ₂` with α predicted from the question /
    /// pseudo-context angle.
    Dynamic,
    /// Sum of reranker relevance against the question and the pseudo-context.
    Rerank,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ais" => Ok(Self::Ais),
            "additive" => Ok(Self::Additive),
            "dynamic" => Ok(Self::Dynamic),
            "rerank" => Ok(Self::Rerank),
            other => Err(Error::Config(format!("unknown scorer `{other}`"))),
        }
    }
}

fn default_n() -> usize {
    5
}
fn default_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Hits per retrieval path.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Documents passed to the generator.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub scorer: Scorer,
    #[serde(default)]
    pub alpha_model: Option<AlphaModel>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            k: default_k(),
            scorer: Scorer::Ais,
            alpha_model: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.k == 0 || self.k > 2 * self.n {
            return Err(Error::Config(format!(
                "k must be in [1, 2n] = [1, {}], got {}",
                2 * self.n,
                self.k
            )));
        }
        if self.scorer == Scorer::Dynamic && self.alpha_model.is_none() {
            return Err(Error::Config("dynamic scorer requires an alpha model".into()));
        }
        Ok(())
    }
}

/// Probes the index with both embeddings in one retrieval round and returns
/// the union of the two top-`n` lists, deduplicated by chunk id.
///
/// Every candidate carries both similarities, computed from its stored
/// embedding even when only one path retrieved it. Order: question hits in
/// rank order, then pseudo-context hits not already present.
pub fn dual_path_retrieve(
    retriever: &dyn Retriever,
    q_emb: &EmbeddingVector,
    p_emb: &EmbeddingVector,
    n: usize,
) -> Result<Vec<Candidate>> {
    if q_emb.dim() != retriever.dimension() || p_emb.dim() != retriever.dimension() {
        return Err(Error::InvalidInput(format!(
            "probe dimensions ({}, {}) do not match index dimension {}",
            q_emb.dim(),
            p_emb.dim(),
            retriever.dimension()
        )));
    }
    let lists = retriever.search(&[q_emb, p_emb], n)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for hit in lists.iter().flatten() {
        if !seen.insert(hit.chunk_id.as_str()) {
            continue;
        }
        let missing = || Error::InvalidInput(format!("index lost chunk `{}`", hit.chunk_id));
        let d = retriever.embedding(&hit.chunk_id).ok_or_else(missing)?;
        let chunk = retriever.chunk(&hit.chunk_id).ok_or_else(missing)?;
        out.push(Candidate {
            chunk_id: hit.chunk_id.clone(),
            text: chunk.text.clone(),
            s1: inner_product(q_emb, &d)?,
            s2: inner_product(p_emb, &d)?,
            score: 0.0,
        });
    }
    Ok(out)
}

fn take_top(mut scored: Vec<(f64, Candidate)>, k: usize) -> Vec<Candidate> {
    scored.sort_by(|a, b| rank_order(a.0, &a.1.chunk_id, b.0, &b.1.chunk_id));
    scored.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Scores candidates with the configured embedding-based scorer and keeps the
/// best `k`, best first. Ties go to the smaller chunk id.
pub fn select(
    candidates: Vec<Candidate>,
    config: &SelectionConfig,
    q_emb: &EmbeddingVector,
    p_emb: &EmbeddingVector,
) -> Result<Vec<Candidate>> {
    if config.scorer == Scorer::Rerank {
        return Err(Error::Config(
            "rerank scoring needs texts and a reranker; use rerank_select".into(),
        ));
    }
    if config.scorer == Scorer::Dynamic && config.alpha_model.is_none() {
        return Err(Error::Config("dynamic scorer requires an alpha model".into()));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    // One α per query, from the question / pseudo-context angle.
    let alpha = match (config.scorer, &config.alpha_model) {
        (Scorer::Dynamic, Some(model)) => Some(model.predict(angle(q_emb, p_emb)?)),
        _ => None,
    };

    let mut scored = Vec::with_capacity(candidates.len());
    for mut c in candidates {
        let key = match config.scorer {
            Scorer::Ais => {
                c.score = ais_score(c.s1, c.s2)?;
                c.score
            }
            Scorer::Additive => {
                c.score = additive_score(c.s1, c.s2)?;
                c.score
            }
            Scorer::Dynamic => {
                let theta1 = c.s1.clamp(-1.0, 1.0).acos();
                let theta2 = c.s2.clamp(-1.0, 1.0).acos();
                let theta = dynamic_angle(theta1, theta2, alpha.unwrap_or(0.5))?;
                c.score = theta.cos();
                -theta
            }
            Scorer::Rerank => unreachable!(),
        };
        scored.push((key, c));
    }
    Ok(take_top(scored, config.k))
}

/// Scores each candidate as `K(d, q) + K(d, p)` with raw reranker outputs and
/// keeps the best `k`.
pub fn rerank_select(
    q_text: &str,
    p_text: &str,
    candidates: Vec<Candidate>,
    reranker: &dyn Reranker,
    k: usize,
) -> Result<Vec<Candidate>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let docs: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let with_q = reranker.score_batch(q_text, &docs)?;
    let with_p = reranker.score_batch(p_text, &docs)?;
    if with_q.len() != docs.len() || with_p.len() != docs.len() {
        return Err(Error::Protocol {
            endpoint: reranker.id().to_string(),
            message: "reranker returned the wrong number of scores".into(),
        });
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for ((mut c, a), b) in candidates.into_iter().zip(with_q).zip(with_p) {
        let score = a + b;
        if !score.is_finite() {
            return Err(Error::Protocol {
                endpoint: reranker.id().to_string(),
                message: format!("non-finite score for `{}`", c.chunk_id),
            });
        }
        c.score = score;
        scored.push((score, c));
    }
    Ok(take_top(scored, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{Chunk, CountingRetriever, VectorIndex};
    use crate::providers::FnReranker;

    fn e(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalize(xs).unwrap()
    }

    fn toy() -> VectorIndex {
        VectorIndex::from_parts(
            "toy",
            ["a", "b", "c", "e"].iter().map(|id| Chunk::new(*id, format!("doc {id}"))).collect(),
            vec![e(&[1.0, 0.0]), e(&[0.0, 1.0]), e(&[0.6, 0.8]), e(&[0.8, 0.6])],
        )
        .unwrap()
    }

    fn cand(id: &str, s1: f64, s2: f64) -> Candidate {
        Candidate { chunk_id: id.into(), text: id.into(), s1, s2, score: 0.0 }
    }

    fn ids(cs: &[Candidate]) -> Vec<&str> {
        cs.iter().map(|c| c.chunk_id.as_str()).collect()
    }

    #[test]
    fn dual_path_toy_example() {
        let idx = toy();
        let out = dual_path_retrieve(&idx, &e(&[1.0, 0.0]), &e(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(ids(&out), ["a", "b"]);
        assert!((out[0].s1 - 1.0).abs() < 1e-12 && out[0].s2.abs() < 1e-12);
        assert!(out[1].s1.abs() < 1e-12 && (out[1].s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dual_path_same_probe_collapses() {
        let idx = toy();
        let q = e(&[0.9, 0.3]);
        let out = dual_path_retrieve(&idx, &q, &q, 3).unwrap();
        assert_eq!(out.len(), 3);
        let single: Vec<_> = idx.top_n(&q, 3).unwrap().into_iter().map(|h| h.chunk_id).collect();
        assert_eq!(ids(&out), single.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn dual_path_is_one_activation() {
        let idx = CountingRetriever::new(toy());
        dual_path_retrieve(&idx, &e(&[1.0, 0.0]), &e(&[0.0, 1.0]), 2).unwrap();
        assert_eq!(idx.activations(), 1);
        assert_eq!(idx.probes(), 2);
    }

    #[test]
    fn dual_path_dimension_mismatch() {
        let idx = toy();
        let bad = e(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            dual_path_retrieve(&idx, &bad, &e(&[1.0, 0.0]), 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ais_picks_jointly_aligned() {
        let q = e(&[1.0, 0.0]);
        let cfg = SelectionConfig { k: 1, ..Default::default() };
        let out = select(vec![cand("x", 0.8, 0.6), cand("y", 0.9, 0.9)], &cfg, &q, &q).unwrap();
        assert_eq!(ids(&out), ["y"]);
        assert!((out[0].score - 0.62).abs() < 1e-12);
    }

    #[test]
    fn select_all_sorted_and_ties() {
        let q = e(&[1.0, 0.0]);
        let cfg = SelectionConfig { k: 4, ..Default::default() };
        let cs = vec![cand("d", 0.5, 0.5), cand("b", 0.9, 0.2), cand("c", 0.5, 0.5), cand("a", 0.1, 0.1)];
        let out = select(cs, &cfg, &q, &q).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        let pos_c = out.iter().position(|c| c.chunk_id == "c").unwrap();
        let pos_d = out.iter().position(|c| c.chunk_id == "d").unwrap();
        assert_eq!(pos_d, pos_c + 1);
    }

    #[test]
    fn select_empty_and_config_errors() {
        let q = e(&[1.0, 0.0]);
        assert!(select(vec![], &SelectionConfig::default(), &q, &q).unwrap().is_empty());
        let dynamic = SelectionConfig { scorer: Scorer::Dynamic, ..Default::default() };
        assert!(matches!(select(vec![cand("a", 0.1, 0.1)], &dynamic, &q, &q), Err(Error::Config(_))));
        let rerank = SelectionConfig { scorer: Scorer::Rerank, ..Default::default() };
        assert!(select(vec![], &rerank, &q, &q).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::default().validate().is_ok());
        assert!(SelectionConfig { k: 11, n: 5, ..Default::default() }.validate().is_err());
        assert!(SelectionConfig { k: 10, n: 5, ..Default::default() }.validate().is_ok());
        assert!(SelectionConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(SelectionConfig { n: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn additive_scorer() {
        let q = e(&[1.0, 0.0]);
        let cfg = SelectionConfig { k: 2, scorer: Scorer::Additive, ..Default::default() };
        // AIS would prefer x (cos(0) * ...), additive prefers y.
        let out = select(vec![cand("x", 1.0, -0.1), cand("y", 0.5, 0.5)], &cfg, &q, &q).unwrap();
        assert_eq!(ids(&out), ["y", "x"]);
        assert!((out[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dynamic_half_matches_ais_order() {
        let q = e(&[1.0, 0.0]);
        let cfg = SelectionConfig {
            k: 3,
            scorer: Scorer::Dynamic,
            alpha_model: Some(AlphaModel::new(0.0, 0.5)),
            ..Default::default()
        };
        let cs = vec![cand("a", 0.9, 0.1), cand("b", 0.6, 0.6), cand("c", 0.2, 0.95)];
        let dynamic = select(cs.clone(), &cfg, &q, &q).unwrap();
        let ais = select(cs, &SelectionConfig { k: 3, ..Default::default() }, &q, &q).unwrap();
        assert_eq!(ids(&dynamic), ids(&ais));
    }

    #[test]
    fn dynamic_full_query_weight_ranks_by_s1() {
        let q = e(&[1.0, 0.0]);
        let p = e(&[0.0, 1.0]);
        let cfg = SelectionConfig {
            k: 3,
            scorer: Scorer::Dynamic,
            alpha_model: Some(AlphaModel::new(0.0, 1.0)),
            ..Default::default()
        };
        let cs = vec![cand("a", 0.3, 0.99), cand("b", 0.9, 0.0), cand("c", 0.5, 0.5)];
        assert_eq!(ids(&select(cs, &cfg, &q, &p).unwrap()), ["b", "c", "a"]);
    }

    #[test]
    fn rerank_examples() {
        let zero = FnReranker::new("zero", |_: &str, _: &str| Ok(0.0));
        let cs = vec![cand("c", 0.1, 0.1), cand("a", 0.2, 0.2), cand("b", 0.3, 0.3)];
        assert_eq!(ids(&rerank_select("q", "p", cs, &zero, 3).unwrap()), ["a", "b", "c"]);

        let table = FnReranker::new("t", |q: &str, d: &str| {
            Ok(match (q, d) {
                ("q", "x") => 0.7,
                ("p", "x") => 0.6,
                ("q", "y") => 0.4,
                ("p", "y") => 0.5,
                _ => 0.0,
            })
        });
        let out = rerank_select("q", "p", vec![cand("y", 0.0, 0.0), cand("x", 0.0, 0.0)], &table, 1).unwrap();
        assert_eq!(ids(&out), ["x"]);
        assert!((out[0].score - 1.3).abs() < 1e-12);
    }

    #[test]
    fn rerank_propagates_errors() {
        let failing = FnReranker::new("down", |_: &str, _: &str| {
            Err(Error::Provider { endpoint: "down".into(), status: Some(503), message: "x".into() })
        });
        let err = rerank_select("q", "p", vec![cand("a", 0.0, 0.0)], &failing, 1).unwrap_err();
        assert!(matches!(err, Error::Provider { status: Some(503), .. }));
    }
}
