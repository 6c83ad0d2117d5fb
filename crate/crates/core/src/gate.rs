//! The agreement gate and end-to-end query pipeline.
//!
//! In `pairs` mode the generator answers each question twice: once directly
//! and once from a pseudo-context it wrote itself. If the two answers agree
//! (and, optionally, the direct answer has no digits), that answer is returned
//! without touching the index. Otherwise the question and the pseudo-context
//! drive dual-path retrieval and selection, and the generator answers from the
//! selected chunks.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{normalize_answer, token_f1, QARecord};
use crate::geometry::{AlphaModel, EmbeddingVector};
use crate::index::Retriever;
use crate::providers::{Embedder, Generator, Reranker};
use crate::selection::{dual_path_retrieve, rerank_select, select, Candidate, Scorer, SelectionConfig};

const Q_SLOT: &str = "{q}";
const CONTEXT_SLOT: &str = "{context}";

/// Prompt templates with `{q}` and `{context}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub pseudo_context: String,
    pub direct: String,
    pub with_context: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            pseudo_context: include_str!("../templates/pseudo_context.txt").to_string(),
            direct: include_str!("../templates/direct.txt").to_string(),
            with_context: include_str!("../templates/with_context.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("pseudo_context", &self.pseudo_context),
            ("direct", &self.direct),
            ("with_context", &self.with_context),
        ] {
            if !t.contains(Q_SLOT) {
                return Err(Error::Config(format!("{name} template lacks the {Q_SLOT} placeholder")));
            }
        }
        if !self.with_context.contains(CONTEXT_SLOT) {
            return Err(Error::Config(format!(
                "with_context template lacks the {CONTEXT_SLOT} placeholder"
            )));
        }
        Ok(())
    }

    /// Loads `pseudo_context.txt`, `direct.txt` and `with_context.txt` from a
    /// directory; missing files keep their defaults.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Config(format!("template directory {} not found", dir.display())));
        }
        let mut t = Self::default();
        for (file, slot) in [
            ("pseudo_context.txt", &mut t.pseudo_context),
            ("direct.txt", &mut t.direct),
            ("with_context.txt", &mut t.with_context),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        t.validate()?;
        Ok(t)
    }

    fn render(template: &str, question: &str, context: Option<&str>) -> String {
        // Fill the context first so a `{q}` inside retrieved text stays literal.
        let mut parts = template.split(CONTEXT_SLOT);
        let mut out = String::with_capacity(template.len() + question.len());
        if let Some(first) = parts.next() {
            out.push_str(&first.replace(Q_SLOT, question));
        }
        for part in parts {
            out.push_str(context.unwrap_or(""));
            out.push_str(&part.replace(Q_SLOT, question));
        }
        out
    }
}

fn require_question(question: &str) -> Result<()> {
    if question.trim().is_empty() {
        return Err(Error::InvalidInput("question is empty".into()));
    }
    Ok(())
}

/// Asks the generator for a passage that reads like retrieved evidence.
pub fn generate_pseudo_context(
    question: &str,
    generator: &dyn Generator,
    templates: &PromptTemplates,
) -> Result<String> {
    require_question(question)?;
    if !templates.pseudo_context.contains(Q_SLOT) {
        return Err(Error::Config("pseudo_context template lacks {q}".into()));
    }
    generator.complete(&PromptTemplates::render(&templates.pseudo_context, question, None))
}

pub fn answer_direct(
    question: &str,
    generator: &dyn Generator,
    templates: &PromptTemplates,
) -> Result<String> {
    require_question(question)?;
    if !templates.direct.contains(Q_SLOT) {
        return Err(Error::Config("direct template lacks {q}".into()));
    }
    generator.complete(&PromptTemplates::render(&templates.direct, question, None))
}

pub fn answer_with_context(
    question: &str,
    context: &str,
    generator: &dyn Generator,
    templates: &PromptTemplates,
) -> Result<String> {
    require_question(question)?;
    if context.trim().is_empty() {
        return Err(Error::InvalidInput("context is empty".into()));
    }
    if !templates.with_context.contains(Q_SLOT) || !templates.with_context.contains(CONTEXT_SLOT) {
        return Err(Error::Config("with_context template needs {q} and {context}".into()));
    }
    generator.complete(&PromptTemplates::render(
        &templates.with_context,
        question,
        Some(context),
    ))
}

/// Joins documents in rank order, separated by blank lines.
pub fn assemble_context<'a>(docs: impl IntoIterator<Item = &'a str>) -> String {
    docs.into_iter().collect::<Vec<_>>().join("\n\n")
}

/// When two answers count as the same.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AgreementPolicy {
    #[default]
    NormalizedExact,
    TokenF1Threshold { threshold: f64 },
}

impl AgreementPolicy {
    pub fn validate(&self) -> Result<()> {
        if let AgreementPolicy::TokenF1Threshold { threshold } = *self {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::Config(format!(
                    "agreement threshold must be in (0, 1], got {threshold}"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for AgreementPolicy {
    type Err = Error;

    /// `exact` or `f1:<threshold>`.
    fn from_str(s: &str) -> Result<Self> {
        let policy = match s.split_once(':') {
            None if s == "exact" || s == "normalized_exact" => AgreementPolicy::NormalizedExact,
            Some(("f1", t)) => AgreementPolicy::TokenF1Threshold {
                threshold: t
                    .parse()
                    .map_err(|_| Error::Config(format!("bad agreement threshold `{t}`")))?,
            },
            _ => return Err(Error::Config(format!("unknown agreement policy `{s}`"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

pub fn answers_agree(a1: &str, a2: &str, policy: &AgreementPolicy) -> bool {
    let (n1, n2) = (normalize_answer(a1), normalize_answer(a2));
    match *policy {
        AgreementPolicy::NormalizedExact => n1 == n2,
        AgreementPolicy::TokenF1Threshold { threshold } => token_f1(&n1, &n2) >= threshold,
    }
}

/// True if the answer contains an ASCII digit.
pub fn numeric_guard(answer: &str) -> bool {
    answer.bytes().any(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[serde(alias = "no_retrieval")]
    NoRetrieval,
    Standard,
    #[default]
    Pairs,
    #[serde(alias = "dpr_ais")]
    DprAis,
    #[serde(alias = "dpr_ais_dynamic")]
    DprAisDynamic,
    #[serde(alias = "dpr_ais_rerank")]
    DprAisRerank,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::NoRetrieval,
        Mode::Standard,
        Mode::Pairs,
        Mode::DprAis,
        Mode::DprAisDynamic,
        Mode::DprAisRerank,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::NoRetrieval => "no-retrieval",
            Mode::Standard => "standard",
            Mode::Pairs => "pairs",
            Mode::DprAis => "dpr-ais",
            Mode::DprAisDynamic => "dpr-ais-dynamic",
            Mode::DprAisRerank => "dpr-ais-rerank",
        }
    }

    fn uses_index(&self) -> bool {
        !matches!(self, Mode::NoRetrieval)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon = s.replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == canon)
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown mode `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

fn default_parallelism() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(flatten)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub agreement: AgreementPolicy,
    #[serde(default)]
    pub exclude_num: bool,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            selection: SelectionConfig::default(),
            agreement: AgreementPolicy::default(),
            exclude_num: false,
            parallelism: default_parallelism(),
        }
    }
}

impl PipelineConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Selection settings actually used by the retrieval branch of `mode`.
    pub fn effective_selection(&self) -> SelectionConfig {
        let mut sel = self.selection.clone();
        match self.mode {
            Mode::DprAisDynamic => {
                sel.scorer = Scorer::Dynamic;
                sel.alpha_model.get_or_insert_with(AlphaModel::default);
            }
            Mode::DprAisRerank => sel.scorer = Scorer::Rerank,
            _ => {}
        }
        sel
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_selection().validate()?;
        self.agreement.validate()?;
        if matches!(self.mode, Mode::Pairs | Mode::DprAis)
            && self.selection.scorer == Scorer::Dynamic
            && self.selection.alpha_model.is_none()
        {
            return Err(Error::Config("dynamic scorer requires an alpha model".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

/// The dual-generation record behind a gate decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub direct_answer: String,
    pub pseudo_context: String,
    pub context_answer: String,
    pub agreed: bool,
    pub numeric_guard_tripped: bool,
}

/// A chunk handed to the generator, with the scores that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedDoc {
    pub chunk_id: String,
    pub s1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s2: Option<f64>,
    pub score: f64,
}

impl From<&Candidate> for SelectedDoc {
    fn from(c: &Candidate) -> Self {
        Self {
            chunk_id: c.chunk_id.clone(),
            s1: c.s1,
            s2: Some(c.s2),
            score: c.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub answer: String,
    pub mode: Mode,
    pub retrieval_activated: bool,
    pub selected_chunk_ids: Vec<String>,
    pub selected: Vec<SelectedDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateOutcome>,
}

/// Shared handles to the three model providers.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub generator: Arc<dyn Generator>,
    pub reranker: Option<Arc<dyn Reranker>>,
}

impl Providers {
    pub fn new(embedder: Arc<dyn Embedder>, generator: Arc<dyn Generator>) -> Self {
        Self {
            embedder,
            generator,
            reranker: None,
        }
    }

    pub fn with_reranker(mut self, reranker: Arc<dyn Reranker>) -> Self {
        self.reranker = Some(reranker);
        self
    }
}

/// A configured question-answering pipeline over one index.
#[derive(Clone)]
pub struct Pipeline {
    retriever: Arc<dyn Retriever>,
    providers: Providers,
    templates: PromptTemplates,
    config: PipelineConfig,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("embedder", &self.providers.embedder.id())
            .field("generator", &self.providers.generator.id())
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(
        retriever: Arc<dyn Retriever>,
        providers: Providers,
        templates: PromptTemplates,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        templates.validate()?;
        if config.mode.uses_index() && providers.embedder.dimension() != retriever.dimension() {
            return Err(Error::Config(format!(
                "embedder `{}` has dimension {} but the index has {}",
                providers.embedder.id(),
                providers.embedder.dimension(),
                retriever.dimension()
            )));
        }
        if config.effective_selection().scorer == Scorer::Rerank
            && config.mode.uses_index()
            && config.mode != Mode::Standard
            && providers.reranker.is_none()
        {
            return Err(Error::Config(format!("mode {} needs a reranker", config.mode)));
        }
        Ok(Self {
            retriever,
            providers,
            templates,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn retriever(&self) -> &Arc<dyn Retriever> {
        &self.retriever
    }

    pub fn run_record(&self, record: &QARecord) -> Result<QueryResult> {
        let mut r = self.run_query(&record.question)?;
        r.id = Some(record.id.clone());
        Ok(r)
    }

    /// Runs many records with at most `config.parallelism` in flight. Output
    /// is sorted by id.
    pub fn run_batch(&self, records: &[QARecord]) -> Result<Vec<QueryResult>> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let mut out: Vec<QueryResult> = pool.install(|| {
            records
                .par_iter()
                .map(|r| {
                    self.run_record(r).map_err(|e| Error::Query {
                        id: r.id.clone(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_>>()
        })?;
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn run_query(&self, question: &str) -> Result<QueryResult> {
        require_question(question)?;
        let gen = self.providers.generator.as_ref();
        let t = &self.templates;
        let mode = self.config.mode;

        let base = |answer: String| QueryResult {
            id: None,
            question: question.to_string(),
            answer,
            mode,
            retrieval_activated: false,
            selected_chunk_ids: Vec::new(),
            selected: Vec::new(),
            pseudo_context: None,
            gate: None,
        };

        match mode {
            Mode::NoRetrieval => {
                let a1 = answer_direct(question, gen, t).map_err(|e| e.at_stage("direct answer"))?;
                Ok(base(a1))
            }
            Mode::Standard => self.run_standard(question, base(String::new())),
            Mode::DprAis | Mode::DprAisDynamic | Mode::DprAisRerank => {
                let pseudo = generate_pseudo_context(question, gen, t)
                    .map_err(|e| e.at_stage("pseudo-context generation"))?;
                self.run_dual_path(question, pseudo, base(String::new()))
            }
            Mode::Pairs => {
                let (pseudo, a1) = rayon::join(
                    || generate_pseudo_context(question, gen, t),
                    || answer_direct(question, gen, t),
                );
                let pseudo = pseudo.map_err(|e| e.at_stage("pseudo-context generation"))?;
                let a1 = a1.map_err(|e| e.at_stage("direct answer"))?;
                let a2 = answer_with_context(question, &pseudo, gen, t)
                    .map_err(|e| e.at_stage("pseudo-context answer"))?;
                let agreed = answers_agree(&a1, &a2, &self.config.agreement);
                let tripped = self.config.exclude_num && numeric_guard(&a1);
                let gate = GateOutcome {
                    direct_answer: a1.clone(),
                    pseudo_context: pseudo.clone(),
                    context_answer: a2,
                    agreed,
                    numeric_guard_tripped: tripped,
                };
                if agreed && !tripped {
                    let mut r = base(a1);
                    r.pseudo_context = Some(pseudo);
                    r.gate = Some(gate);
                    return Ok(r);
                }
                let mut r = base(String::new());
                r.gate = Some(gate);
                self.run_dual_path(question, pseudo, r)
            }
        }
    }

    fn run_standard(&self, question: &str, mut r: QueryResult) -> Result<QueryResult> {
        let k = self.config.selection.k;
        let q_emb = self
            .providers
            .embedder
            .embed_one(question)
            .map_err(|e| e.at_stage("embedding"))?;
        let hits = self
            .retriever
            .search(&[&q_emb], k)
            .map_err(|e| e.at_stage("retrieval"))?
            .pop()
            .unwrap_or_default();
        let docs: Vec<&str> = hits
            .iter()
            .filter_map(|h| self.retriever.chunk(&h.chunk_id).map(|c| c.text.as_str()))
            .collect();
        r.retrieval_activated = true;
        r.answer = self.final_answer(question, &docs)?;
        r.selected = hits
            .iter()
            .map(|h| SelectedDoc {
                chunk_id: h.chunk_id.clone(),
                s1: h.similarity,
                s2: None,
                score: h.similarity,
            })
            .collect();
        r.selected_chunk_ids = hits.into_iter().map(|h| h.chunk_id).collect();
        Ok(r)
    }

    fn run_dual_path(&self, question: &str, pseudo: String, mut r: QueryResult) -> Result<QueryResult> {
        let sel = self.config.effective_selection();
        let embs = self
            .providers
            .embedder
            .embed(&[question, pseudo.as_str()])
            .map_err(|e| e.at_stage("embedding"))?;
        let [q_emb, p_emb]: [EmbeddingVector; 2] = embs.try_into().map_err(|_| {
            Error::InvalidInput("embedder returned the wrong number of vectors".into())
                .at_stage("embedding")
        })?;
        let candidates = dual_path_retrieve(self.retriever.as_ref(), &q_emb, &p_emb, sel.n)
            .map_err(|e| e.at_stage("retrieval"))?;
        let chosen = match sel.scorer {
            Scorer::Rerank => {
                let reranker = self
                    .providers
                    .reranker
                    .as_deref()
                    .ok_or_else(|| Error::Config("rerank scorer needs a reranker".into()))?;
                rerank_select(question, &pseudo, candidates, reranker, sel.k)
            }
            _ => select(candidates, &sel, &q_emb, &p_emb),
        }
        .map_err(|e| e.at_stage("selection"))?;

        r.retrieval_activated = true;
        r.answer = self.final_answer(question, &chosen.iter().map(|c| c.text.as_str()).collect::<Vec<_>>())?;
        r.selected = chosen.iter().map(SelectedDoc::from).collect();
        r.selected_chunk_ids = chosen.into_iter().map(|c| c.chunk_id).collect();
        r.pseudo_context = Some(pseudo);
        Ok(r)
    }

    fn final_answer(&self, question: &str, docs: &[&str]) -> Result<String> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("retrieval returned no documents".into()).at_stage("retrieval"));
        }
        answer_with_context(
            question,
            &assemble_context(docs.iter().copied()),
            self.providers.generator.as_ref(),
            &self.templates,
        )
        .map_err(|e| e.at_stage("final answer"))
    }
}
