//! Answer metrics, run reports and the angle analysis used to fit α.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{generate_pseudo_context, PromptTemplates, QueryResult};
use crate::geometry::{angle, AngleSample};
use crate::index::Retriever;
use crate::providers::{Embedder, Generator};

/// Lowercases, strips ASCII punctuation, drops the articles `a`/`an`/`the`
/// and collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token-level F1 of two already-normalized strings.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn require_golds(golds: &[String]) -> Result<()> {
    if golds.is_empty() {
        return Err(Error::InvalidInput("gold answer list is empty".into()));
    }
    Ok(())
}

/// 1 if the normalized prediction equals any normalized gold answer.
pub fn exact_match(pred: &str, golds: &[String]) -> Result<u8> {
    require_golds(golds)?;
    let p = normalize_answer(pred);
    Ok(u8::from(golds.iter().any(|g| normalize_answer(g) == p)))
}

/// Maximum token F1 over the gold answers.
pub fn f1_score(pred: &str, golds: &[String]) -> Result<f64> {
    require_golds(golds)?;
    let p = normalize_answer(pred);
    Ok(golds
        .iter()
        .map(|g| token_f1(&p, &normalize_answer(g)))
        .fold(0.0, f64::max))
}

/// One question with its gold answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_chunk_ids: Option<Vec<String>>,
}

/// Reads a JSON-lines QA dataset. Malformed lines are reported by number.
pub fn read_dataset_jsonl(path: impl AsRef<Path>) -> Result<Vec<QARecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QARecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {lineno}: {e}", path.display())))?;
        if rec.answers.is_empty() {
            return Err(Error::Format(format!(
                "{} line {lineno}: record `{}` has no answers",
                path.display(),
                rec.id
            )));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Format(format!(
                "{} line {lineno}: duplicate id `{}`",
                path.display(),
                rec.id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub id: String,
    pub prediction: String,
    pub em: u8,
    pub f1: f64,
    pub retrieval_activated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub em_mean: f64,
    pub f1_mean: f64,
    /// Fraction of queries for which the retriever was activated.
    pub ra_ratio: f64,
    pub activated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Sorted by id.
    pub per_query: Vec<QueryScore>,
    pub aggregate: Aggregate,
}

/// Scores a run against its dataset. Results are matched to records by id.
pub fn evaluate_run(dataset: &[QARecord], results: &[QueryResult]) -> Result<RunReport> {
    if dataset.is_empty() || results.is_empty() {
        return Err(Error::InvalidInput("dataset and results must be non-empty".into()));
    }
    if dataset.len() != results.len() {
        return Err(Error::InvalidInput(format!(
            "{} records but {} results",
            dataset.len(),
            results.len()
        )));
    }
    let mut by_id: HashMap<&str, &QueryResult> = HashMap::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let id = r
            .id
            .as_deref()
            .ok_or_else(|| Error::InvalidInput(format!("result #{i} has no id")))?;
        if by_id.insert(id, r).is_some() {
            return Err(Error::InvalidInput(format!("duplicate result id `{id}`")));
        }
    }

    let mut records: Vec<&QARecord> = dataset.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut per_query = Vec::with_capacity(records.len());
    for rec in records {
        let r = by_id.get(rec.id.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!("no result for dataset id `{}`", rec.id))
        })?;
        per_query.push(QueryScore {
            id: rec.id.clone(),
            prediction: r.answer.clone(),
            em: exact_match(&r.answer, &rec.answers)?,
            f1: f1_score(&r.answer, &rec.answers)?,
            retrieval_activated: r.retrieval_activated,
        });
    }

    let count = per_query.len();
    let activated = per_query.iter().filter(|q| q.retrieval_activated).count();
    let aggregate = Aggregate {
        count,
        em_mean: per_query.iter().map(|q| f64::from(q.em)).sum::<f64>() / count as f64,
        f1_mean: per_query.iter().map(|q| q.f1).sum::<f64>() / count as f64,
        ra_ratio: activated as f64 / count as f64,
        activated,
    };
    Ok(RunReport {
        per_query,
        aggregate,
    })
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    aggregate: &'a Aggregate,
    mode: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
}

impl RunReport {
    /// `EM=<x> F1=<y> RA=<z>` with three decimals.
    pub fn summary_line(&self) -> String {
        format!(
            "EM={:.3} F1={:.3} RA={:.3}",
            self.aggregate.em_mean, self.aggregate.f1_mean, self.aggregate.ra_ratio
        )
    }

    /// Writes `results.jsonl` and `summary.json` into `dir`. With
    /// `deterministic`, the timestamp is omitted so reruns are byte-identical.
    pub fn write(&self, dir: impl AsRef<Path>, mode: &str, deterministic: bool) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let path = dir.join("results.jsonl");
        let mut buf = Vec::new();
        for row in &self.per_query {
            serde_json::to_writer(&mut buf, row).expect("row serializes");
            buf.push(b'\n');
        }
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;

        let generated_at_unix = (!deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        });
        let summary = Summary {
            aggregate: &self.aggregate,
            mode,
            generated_at_unix,
        };
        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// A record that could not produce an angle sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AngleAnalysis {
    pub samples: Vec<AngleSample>,
    pub errors: Vec<RecordError>,
}

/// Measures θ₀ (question ↔ pseudo-context), θ₁ (question ↔ relevant chunk)
/// and θ₂ (pseudo-context ↔ relevant chunk) for every (record, ground-truth
/// chunk) pair, with α = θ₂ / (θ₁ + θ₂).
///
/// Records with missing chunks or degenerate angles go to `errors`; the run
/// continues. Provider failures abort.
pub fn analyze_angles(
    dataset: &[QARecord],
    retriever: &dyn Retriever,
    generator: &dyn Generator,
    embedder: &dyn Embedder,
    templates: &PromptTemplates,
) -> Result<AngleAnalysis> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut out = AngleAnalysis::default();
    for rec in dataset {
        let gt = match rec.gt_chunk_ids.as_deref() {
            Some(ids) if !ids.is_empty() => ids,
            _ => {
                out.errors.push(RecordError {
                    id: rec.id.clone(),
                    message: "no gt_chunk_ids".into(),
                });
                continue;
            }
        };
        let pseudo = generate_pseudo_context(&rec.question, generator, templates)?;
        let embs = embedder.embed(&[rec.question.as_str(), pseudo.as_str()])?;
        let (q, p) = (&embs[0], &embs[1]);
        let theta0 = angle(q, p)?;
        for chunk_id in gt {
            let Some(d) = retriever.embedding(chunk_id) else {
                out.errors.push(RecordError {
                    id: rec.id.clone(),
                    message: format!("ground-truth chunk `{chunk_id}` is not in the index"),
                });
                continue;
            };
            let theta1 = angle(q, &d)?;
            let theta2 = angle(p, &d)?;
            match AngleSample::from_angles(theta0, theta1, theta2) {
                Ok(s) => out.samples.push(s),
                Err(e) => out.errors.push(RecordError {
                    id: rec.id.clone(),
                    message: format!("chunk `{chunk_id}`: {e}"),
                }),
            }
        }
    }
    Ok(out)
}

pub fn write_angles_csv(samples: &[AngleSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))?;
    if samples.is_empty() {
        w.write_record(["theta0", "theta1", "theta2", "alpha"])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    for s in samples {
        w.serialize(s).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_angles_csv(path: impl AsRef<Path>) -> Result<Vec<AngleSample>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(rows: &[T], mut out: impl Write) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
