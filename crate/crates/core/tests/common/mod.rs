//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use gatedrag::eval::{read_dataset_jsonl, QARecord};
use gatedrag::gate::{Mode, Pipeline, PipelineConfig, PromptTemplates, Providers};
use gatedrag::index::{ingest, read_corpus_jsonl, ChunkingPolicy, CountingRetriever, VectorIndex};
use gatedrag::providers::{HashEmbedder, TableGenerator, TableRule, TokenHashEmbedder};

/// A scripted question-answering workload for the gate.
///
/// Queries `0..agreeing` get matching direct and pseudo-context answers. The
/// first `with_digits` of those answer with a year, and the first
/// `wrong_direct` of all agreeing queries answer it wrongly. Every answer
/// produced from retrieved context is the gold answer.
pub struct GateWorkload {
    pub records: Vec<QARecord>,
    pub generator: TableGenerator,
    pub index: VectorIndex,
}

pub fn question(i: usize) -> String {
    format!("What is filed under entry {i:03}?")
}

fn letters(mut i: usize) -> String {
    let mut s = String::new();
    loop {
        s.insert(0, (b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            return s;
        }
    }
}

pub fn gate_workload(total: usize, agreeing: usize, with_digits: usize, wrong_direct: usize) -> GateWorkload {
    assert!(with_digits <= agreeing && wrong_direct <= agreeing && agreeing <= total);
    let mut records = Vec::new();
    let mut rules = Vec::new();
    for i in 0..total {
        let q = question(i);
        let gold = if i < with_digits {
            format!("{}", 1800 + i)
        } else {
            format!("Gold {}", letters(i))
        };
        let pseudo = format!("Background notes on entry number {}.", letters(i));
        rules.push(TableRule::new(format!("Question: {q}\nBackground:"), pseudo.clone()));
        let (direct, from_pseudo) = if i < agreeing {
            let a = if i < wrong_direct {
                if i < with_digits {
                    format!("{}", 1700 + i)
                } else {
                    format!("Wrong {}", letters(i))
                }
            } else {
                gold.clone()
            };
            (a.clone(), a)
        } else {
            (format!("Guess {}", letters(i)), format!("Other {}", letters(i)))
        };
        rules.push(TableRule::all(
            [format!("Context:\n{pseudo}\n"), format!("Question: {q}\n")],
            from_pseudo,
        ));
        rules.push(TableRule::all(["Context:".to_string(), format!("Question: {q}\n")], gold.clone()));
        rules.push(TableRule::new(format!("Question: {q}\n"), direct));
        records.push(QARecord {
            id: format!("q{i:03}"),
            question: q,
            answers: vec![gold],
            gt_chunk_ids: None,
        });
    }
    let generator = TableGenerator::new(rules, "unknown");
    let embedder = HashEmbedder::new(16, 11).unwrap();
    let corpus = (0..64).map(|j| gatedrag::Chunk::new(format!("c{j:02}"), format!("passage {j}")));
    let index = ingest(corpus, &embedder, ChunkingPolicy::Passthrough).unwrap();
    GateWorkload {
        records,
        generator,
        index,
    }
}

impl GateWorkload {
    /// A pipeline over an instrumented copy of the index.
    pub fn pipeline(&self, config: PipelineConfig) -> (Pipeline, Arc<CountingRetriever<VectorIndex>>) {
        let counting = Arc::new(CountingRetriever::new(self.index.clone()));
        let providers = Providers::new(
            Arc::new(HashEmbedder::new(16, 11).unwrap()),
            Arc::new(self.generator.clone()),
        );
        let pipeline = Pipeline::new(
            counting.clone(),
            providers,
            PromptTemplates::default(),
            config,
        )
        .unwrap();
        (pipeline, counting)
    }
}

/// The mini benchmark's embedding of `text`.
pub fn embed(text: &str) -> gatedrag::EmbeddingVector {
    use gatedrag::providers::Embedder;
    TokenHashEmbedder::new(768, 0).unwrap().embed_one(text).unwrap()
}

pub fn mini_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini")
}

pub struct MiniBench {
    pub index: VectorIndex,
    pub records: Vec<QARecord>,
    pub generator: TableGenerator,
}

pub fn mini_bench() -> MiniBench {
    let dir = mini_dir();
    let corpus = read_corpus_jsonl(dir.join("corpus.jsonl")).unwrap();
    let embedder = TokenHashEmbedder::new(768, 0).unwrap();
    let index = ingest(corpus, &embedder, ChunkingPolicy::Passthrough).unwrap();
    let records = read_dataset_jsonl(dir.join("dataset.jsonl")).unwrap();
    let generator =
        TableGenerator::from_json(&std::fs::read_to_string(dir.join("generator.json")).unwrap()).unwrap();
    MiniBench {
        index,
        records,
        generator,
    }
}

impl MiniBench {
    pub fn pipeline(&self, mode: Mode) -> Pipeline {
        let providers = Providers::new(
            Arc::new(TokenHashEmbedder::new(768, 0).unwrap()),
            Arc::new(self.generator.clone()),
        );
        Pipeline::new(
            Arc::new(self.index.clone()),
            providers,
            PromptTemplates::default(),
            PipelineConfig::with_mode(mode),
        )
        .unwrap()
    }
}
