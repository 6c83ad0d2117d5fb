//! Chunk storage and exact inner-product search.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_dims, dot_f32_row, EmbeddingVector};
use crate::providers::{check_embeddings, Embedder};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const EMBEDDINGS_FILE: &str = "embeddings.bin";
const CHUNKS_FILE: &str = "chunks.jsonl";
const EMBED_BATCH: usize = 32;
/// Stored rows are f32; this is the norm slack accepted when loading them.
const STORED_NORM_SLACK: f64 = 1e-5;

/// A corpus passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

impl Chunk {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            title: None,
        }
    }
}

/// How corpus records are split before embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChunkingPolicy {
    /// One record, one chunk.
    #[default]
    Passthrough,
    /// Whitespace-word windows. Every window gets the record id suffixed with
    /// `-<window index>`.
    FixedWindow { window: usize, overlap: usize },
}

impl ChunkingPolicy {
    pub fn fixed(window: usize, overlap: usize) -> Result<Self> {
        if window == 0 || overlap >= window {
            return Err(Error::Config(format!(
                "fixed-window chunking needs window > overlap >= 0, got window={window} overlap={overlap}"
            )));
        }
        Ok(Self::FixedWindow { window, overlap })
    }

    pub fn apply(&self, record: Chunk) -> Vec<Chunk> {
        match *self {
            ChunkingPolicy::Passthrough => vec![record],
            ChunkingPolicy::FixedWindow { window, overlap } => {
                let words: Vec<&str> = record.text.split_whitespace().collect();
                let step = window - overlap;
                let mut out = Vec::new();
                let mut start = 0;
                loop {
                    let end = (start + window).min(words.len());
                    out.push(Chunk {
                        id: format!("{}-{}", record.id, out.len()),
                        text: words[start..end].join(" "),
                        title: record.title.clone(),
                    });
                    if end >= words.len() {
                        break;
                    }
                    start += step;
                }
                out
            }
        }
    }
}

impl FromStr for ChunkingPolicy {
    type Err = Error;

    /// Accepts `passthrough`, `fixed:<window>` or `fixed:<window>:<overlap>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad number `{p}` in chunking policy `{s}`")))
        };
        match parts.as_slice() {
            ["passthrough"] => Ok(Self::Passthrough),
            ["fixed"] => Self::fixed(100, 0),
            ["fixed", w] => Self::fixed(num(w)?, 0),
            ["fixed", w, o] => Self::fixed(num(w)?, num(o)?),
            _ => Err(Error::Config(format!("unknown chunking policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    InnerProduct,
}

/// One search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub chunk_id: String,
    pub similarity: f64,
}

/// Best-first order: similarity descending, then chunk id ascending.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Anything that can answer top-n similarity queries over stored chunks.
pub trait Retriever: Send + Sync {
    fn dimension(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn top_n(&self, probe: &EmbeddingVector, n: usize) -> Result<Vec<ScoredHit>>;

    /// One retrieval round with several probes. Counts as a single retriever
    /// activation for instrumentation purposes.
    fn search(&self, probes: &[&EmbeddingVector], n: usize) -> Result<Vec<Vec<ScoredHit>>> {
        probes.iter().map(|p| self.top_n(p, n)).collect()
    }

    fn chunk(&self, id: &str) -> Option<&Chunk>;

    fn embedding(&self, id: &str) -> Option<EmbeddingVector>;
}

/// Flat index of unit-norm chunk embeddings, stored row-major as `f32`.
#[derive(Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    metric: Metric,
    embedder_id: String,
    chunks: Vec<Chunk>,
    rows: Vec<f32>,
    by_id: HashMap<String, usize>,
}

impl fmt::Debug for VectorIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorIndex")
            .field("dimension", &self.dimension)
            .field("embedder_id", &self.embedder_id)
            .field("count", &self.chunks.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    dimension: usize,
    metric: Metric,
    embedder_id: String,
    count: usize,
    format_version: u32,
}

impl VectorIndex {
    /// Builds an index from chunks and their (unit-norm) embeddings.
    pub fn from_parts(
        embedder_id: impl Into<String>,
        chunks: Vec<Chunk>,
        embeddings: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        let dimension = embeddings
            .first()
            .map(EmbeddingVector::dim)
            .ok_or_else(|| Error::Ingestion("cannot build an empty index".into()))?;
        if chunks.len() != embeddings.len() {
            return Err(Error::Ingestion(format!(
                "{} chunks but {} embeddings",
                chunks.len(),
                embeddings.len()
            )));
        }
        let mut rows = Vec::with_capacity(chunks.len() * dimension);
        for v in &embeddings {
            check_dims(dimension, v.dim())?;
            rows.extend(v.to_f32());
        }
        Self::assemble(dimension, embedder_id.into(), chunks, rows)
            .map_err(|e| match e {
                Error::Format(m) => Error::Ingestion(m),
                other => other,
            })
    }

    fn assemble(
        dimension: usize,
        embedder_id: String,
        chunks: Vec<Chunk>,
        rows: Vec<f32>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Format("dimension must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            if c.id.is_empty() {
                return Err(Error::Format(format!("chunk #{i} has an empty id")));
            }
            if by_id.insert(c.id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate chunk id `{}`", c.id)));
            }
        }
        debug_assert_eq!(rows.len(), chunks.len() * dimension);
        Ok(Self {
            dimension,
            metric: Metric::InnerProduct,
            embedder_id,
            chunks,
            rows,
            by_id,
        })
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Stored `f32` row for a chunk id.
    pub fn raw_embedding(&self, id: &str) -> Option<&[f32]> {
        self.by_id.get(id).map(|&i| self.row(i))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let manifest = Manifest {
            dimension: self.dimension,
            metric: self.metric,
            embedder_id: self.embedder_id.clone(),
            count: self.chunks.len(),
            format_version: FORMAT_VERSION,
        };
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(EMBEDDINGS_FILE);
        let mut bytes = Vec::with_capacity(self.rows.len() * 4);
        for x in &self.rows {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(CHUNKS_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for c in &self.chunks {
            let line = serde_json::to_string(c).expect("chunk serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("corrupt manifest {}: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported index format version {}",
                manifest.format_version
            )));
        }
        if manifest.dimension == 0 {
            return Err(Error::Format("manifest declares dimension 0".into()));
        }

        let path = dir.join(EMBEDDINGS_FILE);
        let bytes = fs::read(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let expected = manifest.count * manifest.dimension * 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{} holds {} bytes but manifest (count {}, dimension {}) implies {expected}",
                path.display(),
                bytes.len(),
                manifest.count,
                manifest.dimension
            )));
        }
        let rows: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let path = dir.join(CHUNKS_FILE);
        let file = fs::File::open(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let mut chunks = Vec::with_capacity(manifest.count);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line).map_err(|e| {
                Error::Format(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
            chunks.push(chunk);
        }
        if chunks.len() != manifest.count {
            return Err(Error::Format(format!(
                "manifest count {} but {} chunk records",
                manifest.count,
                chunks.len()
            )));
        }

        let index = Self::assemble(manifest.dimension, manifest.embedder_id, chunks, rows)?;
        for i in 0..index.chunks.len() {
            let norm = index
                .row(i)
                .iter()
                .map(|&x| f64::from(x).powi(2))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > STORED_NORM_SLACK {
                return Err(Error::Format(format!(
                    "stored embedding for `{}` has norm {norm}",
                    index.chunks[i].id
                )));
            }
        }
        Ok(index)
    }
}

impl Retriever for VectorIndex {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn len(&self) -> usize {
        self.chunks.len()
    }

    fn top_n(&self, probe: &EmbeddingVector, n: usize) -> Result<Vec<ScoredHit>> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        check_dims(self.dimension, probe.dim())?;
        let p = probe.as_slice();
        let mut scored: Vec<(f64, usize)> = (0..self.chunks.len())
            .map(|i| (dot_f32_row(p, self.row(i)).clamp(-1.0, 1.0), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(a.0, &self.chunks[a.1].id, b.0, &self.chunks[b.1].id)
        };
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, cmp);
            scored.truncate(n);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(similarity, i)| ScoredHit {
                chunk_id: self.chunks[i].id.clone(),
                similarity,
            })
            .collect())
    }

    fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    fn embedding(&self, id: &str) -> Option<EmbeddingVector> {
        self.by_id
            .get(id)
            .map(|&i| EmbeddingVector::from_unit_f32(self.row(i)))
    }
}

impl<T: Retriever + ?Sized> Retriever for Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn len(&self) -> usize {
        (**self).len()
    }
    fn top_n(&self, probe: &EmbeddingVector, n: usize) -> Result<Vec<ScoredHit>> {
        (**self).top_n(probe, n)
    }
    fn search(&self, probes: &[&EmbeddingVector], n: usize) -> Result<Vec<Vec<ScoredHit>>> {
        (**self).search(probes, n)
    }
    fn chunk(&self, id: &str) -> Option<&Chunk> {
        (**self).chunk(id)
    }
    fn embedding(&self, id: &str) -> Option<EmbeddingVector> {
        (**self).embedding(id)
    }
}

/// Wraps a retriever and counts how often it is asked to search.
///
/// `activations` counts retrieval rounds (one per `search` or direct `top_n`
/// call); `probes` counts individual probe vectors.
#[derive(Debug)]
pub struct CountingRetriever<R> {
    inner: R,
    activations: AtomicUsize,
    probes: AtomicUsize,
}

impl<R: Retriever> CountingRetriever<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            activations: AtomicUsize::new(0),
            probes: AtomicUsize::new(0),
        }
    }

    pub fn activations(&self) -> usize {
        self.activations.load(AtomicOrdering::SeqCst)
    }

    pub fn probes(&self) -> usize {
        self.probes.load(AtomicOrdering::SeqCst)
    }

    pub fn reset(&self) {
        self.activations.store(0, AtomicOrdering::SeqCst);
        self.probes.store(0, AtomicOrdering::SeqCst);
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }
}

impl<R: Retriever> Retriever for CountingRetriever<R> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn top_n(&self, probe: &EmbeddingVector, n: usize) -> Result<Vec<ScoredHit>> {
        self.activations.fetch_add(1, AtomicOrdering::SeqCst);
        self.probes.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.top_n(probe, n)
    }

    fn search(&self, probes: &[&EmbeddingVector], n: usize) -> Result<Vec<Vec<ScoredHit>>> {
        self.activations.fetch_add(1, AtomicOrdering::SeqCst);
        self.probes.fetch_add(probes.len(), AtomicOrdering::SeqCst);
        probes.iter().map(|p| self.inner.top_n(p, n)).collect()
    }

    fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.inner.chunk(id)
    }

    fn embedding(&self, id: &str) -> Option<EmbeddingVector> {
        self.inner.embedding(id)
    }
}

/// Chunks, embeds and indexes a corpus.
pub fn ingest<I>(corpus: I, embedder: &dyn Embedder, chunking: ChunkingPolicy) -> Result<VectorIndex>
where
    I: IntoIterator<Item = Chunk>,
{
    let mut chunks = Vec::new();
    let mut seen = HashSet::new();
    for record in corpus {
        if record.id.is_empty() {
            return Err(Error::Ingestion("record with empty id".into()));
        }
        if record.text.trim().is_empty() {
            return Err(Error::Ingestion(format!("record `{}` has empty text", record.id)));
        }
        for chunk in chunking.apply(record) {
            if !seen.insert(chunk.id.clone()) {
                return Err(Error::Ingestion(format!("duplicate chunk id `{}`", chunk.id)));
            }
            chunks.push(chunk);
        }
    }
    if chunks.is_empty() {
        return Err(Error::Ingestion("corpus is empty".into()));
    }

    let mut embeddings = Vec::with_capacity(chunks.len());
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        let vs = embedder.embed(&texts)?;
        check_embeddings(embedder.id(), embedder.dimension(), texts.len(), &vs)?;
        embeddings.extend(vs);
    }
    VectorIndex::from_parts(embedder.id(), chunks, embeddings)
}

/// Reads a JSON-lines corpus (`{"id", "text", "title"?}` per line).
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<Chunk>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        out.push(chunk);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{HashEmbedder, StaticEmbedder};

    fn toy() -> VectorIndex {
        let e = |xs: &[f64]| EmbeddingVector::normalize(xs).unwrap();
        VectorIndex::from_parts(
            "toy",
            vec![Chunk::new("a", "A"), Chunk::new("b", "B"), Chunk::new("c", "C")],
            vec![e(&[1.0, 0.0]), e(&[0.0, 1.0]), e(&[0.6, 0.8])],
        )
        .unwrap()
    }

    #[test]
    fn top_n_toy_example() {
        let idx = toy();
        let probe = EmbeddingVector::normalize(&[0.8, 0.6]).unwrap();
        let hits = idx.top_n(&probe, 2).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, ["c", "a"]);
        assert!((hits[0].similarity - 0.96).abs() < 1e-6);
        assert!((hits[1].similarity - 0.8).abs() < 1e-6);
    }

    #[test]
    fn top_n_self_and_oversized() {
        let idx = toy();
        let probe = idx.embedding("b").unwrap();
        let hits = idx.top_n(&probe, 1).unwrap();
        assert_eq!(hits[0].chunk_id, "b");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(idx.top_n(&probe, 10).unwrap().len(), 3);
    }

    #[test]
    fn top_n_errors() {
        let idx = toy();
        let probe = EmbeddingVector::normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(idx.top_n(&probe, 1), Err(Error::InvalidInput(_))));
        let probe = EmbeddingVector::normalize(&[1.0, 0.0]).unwrap();
        assert!(idx.top_n(&probe, 0).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let e = |xs: &[f64]| EmbeddingVector::normalize(xs).unwrap();
        let idx = VectorIndex::from_parts(
            "toy",
            vec![Chunk::new("z", "z"), Chunk::new("m", "m"), Chunk::new("b", "b")],
            vec![e(&[1.0, 0.0]), e(&[1.0, 0.0]), e(&[1.0, 0.0])],
        )
        .unwrap();
        let hits = idx.top_n(&e(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(hits[0].chunk_id, "b");
        assert_eq!(hits[1].chunk_id, "m");
    }

    #[test]
    fn ingest_passthrough() {
        let emb = HashEmbedder::new(8, 0).unwrap();
        let corpus = (0..4).map(|i| Chunk::new(format!("d{i}"), format!("text {i}")));
        let idx = ingest(corpus, &emb, ChunkingPolicy::Passthrough).unwrap();
        assert_eq!(idx.len(), 4);
        assert_eq!(idx.embedder_id(), "hash:8:0");
        for c in idx.chunks() {
            assert!((idx.embedding(&c.id).unwrap().norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ingest_errors() {
        let emb = HashEmbedder::new(8, 0).unwrap();
        assert!(matches!(
            ingest(Vec::new(), &emb, ChunkingPolicy::Passthrough),
            Err(Error::Ingestion(_))
        ));
        let dup = vec![Chunk::new("x", "one"), Chunk::new("x", "two")];
        match ingest(dup, &emb, ChunkingPolicy::Passthrough) {
            Err(Error::Ingestion(m)) => assert!(m.contains("`x`"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(ingest(vec![Chunk::new("y", "  ")], &emb, ChunkingPolicy::Passthrough).is_err());
    }

    #[test]
    fn fixed_window_chunking() {
        let words: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let emb = StaticEmbedder::new([("unused", vec![1.0, 0.0])]).unwrap();
        let policy = ChunkingPolicy::fixed(100, 0).unwrap();
        let idx = ingest(vec![Chunk::new("doc", words.join(" "))], &emb, policy).unwrap();
        let ids: Vec<_> = idx.chunks().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["doc-0", "doc-1", "doc-2"]);
        assert_eq!(idx.chunks()[2].text.split_whitespace().count(), 50);

        let overlapped = ChunkingPolicy::fixed(100, 50).unwrap().apply(Chunk::new("d", words.join(" ")));
        assert_eq!(overlapped.len(), 4);
        assert!(overlapped[1].text.starts_with("w50 "));
    }

    #[test]
    fn chunking_policy_parsing() {
        assert_eq!("passthrough".parse::<ChunkingPolicy>().unwrap(), ChunkingPolicy::Passthrough);
        assert_eq!(
            "fixed:64:8".parse::<ChunkingPolicy>().unwrap(),
            ChunkingPolicy::FixedWindow { window: 64, overlap: 8 }
        );
        assert!("fixed:10:10".parse::<ChunkingPolicy>().is_err());
        assert!("sliding".parse::<ChunkingPolicy>().is_err());
    }

    #[test]
    fn counting_retriever_counts_rounds() {
        let idx = CountingRetriever::new(toy());
        let p = EmbeddingVector::normalize(&[1.0, 0.0]).unwrap();
        idx.search(&[&p, &p], 1).unwrap();
        idx.top_n(&p, 1).unwrap();
        assert_eq!(idx.activations(), 2);
        assert_eq!(idx.probes(), 3);
        idx.embedding("a");
        assert_eq!(idx.activations(), 2);
    }
}
