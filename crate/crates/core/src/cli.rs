//! The `gatedrag` command-line tool.
//!
//! Exit codes: 0 success, 1 data or processing error, 2 usage or
//! configuration error. Query results go to stdout as JSON; human-readable
//! progress and summaries go to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::{
    analyze_angles, evaluate_run, read_angles_csv, read_dataset_jsonl, write_angles_csv,
};
use crate::gate::{AgreementPolicy, Mode, Pipeline, PipelineConfig, PromptTemplates, Providers};
use crate::geometry::{fit_alpha_model, AlphaModel};
use crate::index::{ingest, read_corpus_jsonl, ChunkingPolicy, CountingRetriever, Retriever, VectorIndex};
use crate::providers::ProviderSpec;
use crate::selection::Scorer;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gatedrag", version, about = "Gated dual-path retrieval-augmented QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a JSON-lines corpus and write an index directory.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// `hash:<dim>[:seed]` or `bow:<dim>[:seed]`; remote embedders come from --config.
        #[arg(long)]
        embedder: Option<String>,
        /// `passthrough`, `fixed:<window>` or `fixed:<window>:<overlap>`.
        #[arg(long, default_value = "passthrough")]
        chunking: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Answer one question and print the result as JSON.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Run a QA dataset and write results.jsonl and summary.json.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Omit the timestamp so repeated runs are byte-identical.
        #[arg(long)]
        deterministic: bool,
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Measure query / pseudo-context / ground-truth angles and write a CSV.
    AnalyzeAngles {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Fit alpha = slope * theta0 + intercept to an angle CSV.
    FitAlpha {
        #[arg(long)]
        angles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PipelineOpts {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_scorer)]
    scorer: Option<Scorer>,
    /// `exact` or `f1:<threshold>`.
    #[arg(long, value_parser = parse_agreement)]
    agreement: Option<AgreementPolicy>,
    #[arg(long)]
    exclude_num: bool,
    /// `<slope>,<intercept>` for the dynamic scorer.
    #[arg(long, value_parser = parse_alpha_model)]
    alpha_model: Option<AlphaModel>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Directory holding pseudo_context.txt / direct.txt / with_context.txt.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Defaults to the embedder recorded in the index.
    #[arg(long)]
    embedder: Option<String>,
    /// `table:<rules.json>`; remote generators come from --config.
    #[arg(long)]
    generator: Option<String>,
    /// `overlap`; remote rerankers come from --config.
    #[arg(long)]
    reranker: Option<String>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.root().to_string())
}

fn parse_scorer(s: &str) -> Result<Scorer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_agreement(s: &str) -> Result<AgreementPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_alpha_model(s: &str) -> Result<AlphaModel, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected <slope>,<intercept>, got `{s}`"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad number `{x}`"));
    Ok(AlphaModel::new(num(a)?, num(b)?))
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub embedder: Option<ProviderSpec>,
    #[serde(default)]
    pub generator: Option<ProviderSpec>,
    #[serde(default)]
    pub reranker: Option<ProviderSpec>,
}

/// Command failure, split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn require_file(path: &Path, what: &str) -> CliResult {
    if !path.is_file() {
        return Err(Failure::Usage(format!("cannot read {what} {}", path.display())));
    }
    Ok(())
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: CliConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        // Relative paths inside the config are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = &cfg.templates {
            cfg.templates = Some(base.join(t));
        }
        if let Some(ProviderSpec::Short(s)) = &cfg.generator {
            if let Some(rest) = s.strip_prefix("table:") {
                cfg.generator = Some(ProviderSpec::Short(format!(
                    "table:{}",
                    base.join(rest).display()
                )));
            }
        }
        Ok(cfg)
    }
}

impl PipelineOpts {
    /// Config file values with flag overrides applied.
    fn resolve(&self) -> Result<CliConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => CliConfig::load(path)?,
            None => CliConfig::default(),
        };
        let p = &mut cfg.pipeline;
        if let Some(m) = self.mode {
            p.mode = m;
        }
        if let Some(n) = self.n {
            p.selection.n = n;
        }
        if let Some(k) = self.k {
            p.selection.k = k;
        }
        if let Some(s) = self.scorer {
            p.selection.scorer = s;
        }
        if let Some(a) = self.agreement {
            p.agreement = a;
        }
        if let Some(m) = self.alpha_model {
            p.selection.alpha_model = Some(m);
        }
        if self.exclude_num {
            p.exclude_num = true;
        }
        if let Some(n) = self.parallelism {
            p.parallelism = n;
        }
        if let Some(t) = &self.templates {
            cfg.templates = Some(t.clone());
        }
        if let Some(e) = &self.embedder {
            cfg.embedder = Some(ProviderSpec::Short(e.clone()));
        }
        if let Some(g) = &self.generator {
            cfg.generator = Some(ProviderSpec::Short(g.clone()));
        }
        if let Some(r) = &self.reranker {
            cfg.reranker = Some(ProviderSpec::Short(r.clone()));
        }
        cfg.pipeline.validate()?;
        Ok(cfg)
    }
}

/// A loaded index plus a ready pipeline, built from a resolved config.
pub struct Session {
    pub index: Arc<CountingRetriever<VectorIndex>>,
    pub pipeline: Pipeline,
    pub providers: Providers,
    pub templates: PromptTemplates,
}

impl Session {
    /// Loads the index at `index_dir` and wires up the configured providers.
    ///
    /// With no embedder configured, the one recorded in the index manifest is
    /// rebuilt; a configured embedder must match it.
    pub fn open(index_dir: &Path, cfg: CliConfig) -> Result<Self, Error> {
        let templates = match &cfg.templates {
            Some(dir) => PromptTemplates::from_dir(dir)?,
            None => PromptTemplates::default(),
        };
        let generator = cfg
            .generator
            .as_ref()
            .ok_or_else(|| Error::Config("no generator configured".into()))?
            .generator()?;
        let reranker = cfg.reranker.as_ref().map(ProviderSpec::reranker).transpose()?;

        if !index_dir.join("manifest.json").is_file() {
            return Err(Error::Config(format!("no index at {}", index_dir.display())));
        }
        let index = VectorIndex::load(index_dir)?;
        let embedder = cfg
            .embedder
            .clone()
            .unwrap_or_else(|| ProviderSpec::from(index.embedder_id()))
            .embedder()?;
        if embedder.id() != index.embedder_id() {
            return Err(Error::Config(format!(
                "index was built with embedder `{}` but `{}` is configured",
                index.embedder_id(),
                embedder.id()
            )));
        }

        let mut providers = Providers::new(embedder, generator);
        providers.reranker = reranker;
        let index = Arc::new(CountingRetriever::new(index));
        let pipeline = Pipeline::new(index.clone(), providers.clone(), templates.clone(), cfg.pipeline)?;
        Ok(Session {
            index,
            pipeline,
            providers,
            templates,
        })
    }
}

fn setup(index_dir: &Path, opts: &PipelineOpts) -> CliResult<Session> {
    Ok(Session::open(index_dir, opts.resolve()?)?)
}

fn cmd_ingest(
    corpus: &Path,
    index_dir: &Path,
    embedder: Option<&str>,
    chunking: &str,
    config: Option<&Path>,
    err: &mut dyn Write,
) -> CliResult {
    let chunking: ChunkingPolicy = chunking.parse()?;
    let spec = match (embedder, config) {
        (Some(e), _) => ProviderSpec::Short(e.to_string()),
        (None, Some(path)) => CliConfig::load(path)?
            .embedder
            .ok_or_else(|| Failure::Usage("config has no embedder".into()))?,
        (None, None) => return Err(Failure::Usage("--embedder or --config is required".into())),
    };
    let embedder = spec.embedder()?;
    require_file(corpus, "corpus")?;
    let records = read_corpus_jsonl(corpus)?;
    let index = ingest(records, embedder.as_ref(), chunking)?;
    index.save(index_dir)?;
    let _ = writeln!(
        err,
        "ingested {} chunks (dimension {}) into {}",
        index.len(),
        index.dimension(),
        index_dir.display()
    );
    Ok(())
}

fn cmd_query(index: &Path, question: &str, opts: &PipelineOpts, out: &mut dyn Write) -> CliResult {
    let s = setup(index, opts)?;
    let result = s.pipeline.run_query(question)?;
    let json = serde_json::to_string(&result).expect("result serializes");
    writeln!(out, "{json}").map_err(|e| Failure::Data(e.to_string()))
}

fn cmd_eval(
    index: &Path,
    dataset: &Path,
    out_dir: &Path,
    deterministic: bool,
    opts: &PipelineOpts,
    err: &mut dyn Write,
) -> CliResult {
    require_file(dataset, "dataset")?;
    let s = setup(index, opts)?;
    let records = read_dataset_jsonl(dataset)?;
    if records.is_empty() {
        return Err(Failure::Data(format!("dataset {} is empty", dataset.display())));
    }
    let results = s.pipeline.run_batch(&records)?;
    let report = evaluate_run(&records, &results)?;
    debug_assert_eq!(report.aggregate.activated, s.index.activations());
    report.write(out_dir, s.pipeline.config().mode.as_str(), deterministic)?;
    let _ = writeln!(err, "{}", report.summary_line());
    Ok(())
}

fn cmd_analyze_angles(
    index: &Path,
    dataset: &Path,
    out_path: &Path,
    opts: &PipelineOpts,
    err: &mut dyn Write,
) -> CliResult {
    require_file(dataset, "dataset")?;
    let s = setup(index, opts)?;
    let records = read_dataset_jsonl(dataset)?;
    if records.is_empty() {
        return Err(Failure::Data(format!("dataset {} is empty", dataset.display())));
    }
    let analysis = analyze_angles(
        &records,
        s.index.as_ref(),
        s.providers.generator.as_ref(),
        s.providers.embedder.as_ref(),
        &s.templates,
    )?;
    write_angles_csv(&analysis.samples, out_path)?;
    for e in &analysis.errors {
        let _ = writeln!(err, "skipped {}: {}", e.id, e.message);
    }
    let _ = writeln!(
        err,
        "wrote {} angle samples to {} ({} skipped)",
        analysis.samples.len(),
        out_path.display(),
        analysis.errors.len()
    );
    Ok(())
}

fn cmd_fit_alpha(angles: &Path, out_path: &Path, out: &mut dyn Write) -> CliResult {
    require_file(angles, "angle csv")?;
    let samples = read_angles_csv(angles)?;
    let fit = fit_alpha_model(&samples)?;
    let mut json = serde_json::to_string_pretty(&fit).expect("fit serializes");
    json.push('\n');
    fs::write(out_path, &json).map_err(|e| Failure::Data(format!("{}: {e}", out_path.display())))?;
    out.write_all(json.as_bytes())
        .map_err(|e| Failure::Data(e.to_string()))
}

/// Usage text for the subcommand named in `args`, or the top-level usage.
fn usage_for(args: &[OsString]) -> String {
    let mut cmd = Cli::command();
    let name = args.get(1).and_then(|a| a.to_str()).unwrap_or_default();
    match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.clone().bin_name(format!("gatedrag {name}")).render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let mut rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                if !rendered.contains("Usage:") {
                    rendered.push('\n');
                    rendered.push_str(&usage_for(&args));
                    rendered.push('\n');
                }
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };

    let result = match &cli.command {
        Command::Ingest {
            corpus,
            index,
            embedder,
            chunking,
            config,
        } => cmd_ingest(corpus, index, embedder.as_deref(), chunking, config.as_deref(), err),
        Command::Query {
            index,
            question,
            opts,
        } => cmd_query(index, question, opts, out),
        Command::Eval {
            index,
            dataset,
            out: out_dir,
            deterministic,
            opts,
        } => cmd_eval(index, dataset, out_dir, *deterministic, opts, err),
        Command::AnalyzeAngles {
            index,
            dataset,
            out: out_path,
            opts,
        } => cmd_analyze_angles(index, dataset, out_path, opts, err),
        Command::FitAlpha { angles, out: out_path } => cmd_fit_alpha(angles, out_path, out),
    };

    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DATA
        }
    }
}
