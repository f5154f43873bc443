//! Command-line pipeline: ingest logs, build the graph, generate synthetic
//! corpora, train with cross-validation, evaluate checkpoints, and run the
//! variant ablation. Every command records a manifest with input hashes and
//! the resolved config, and all randomness flows from one `--seed`.
//!
//! Config files are JSON; command-line flags override file values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::checkpoint::{self, sha256_hex};
use crate::graph::{
    build_graph, export_tsv, import_tsv, AttemptTable, DifficultyTable, GraphError, QKGraph,
};
use crate::ingest::{
    compute_stats, make_folds, parse_log, read_sequences, write_sequences, ColumnMapping,
    IngestError, ParseOptions, StudentSequence,
};
use crate::model::{DagktModel, ModelConfig, Variant};
use crate::train::{
    fold_artifacts, generate_synthetic, run_cv, trainer::EvalReport, SynthSpec, TrainConfig,
    TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Input files that cannot be understood (CSV/JSON/TSV parse failures).
    #[error("{0}")]
    Parse(String),
    /// Understood but invalid: bad config values, provenance mismatches.
    #[error("{0}")]
    Validation(String),
    /// Failures while doing the work: IO, training, metrics.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

fn from_ingest(e: IngestError) -> CliError {
    match e {
        IngestError::Io(_) => CliError::Runtime(e.to_string()),
        IngestError::EmptyCorpus | IngestError::BadFoldCount { .. } => {
            CliError::Validation(e.to_string())
        }
        _ => CliError::Parse(e.to_string()),
    }
}

fn from_graph(e: GraphError) -> CliError {
    match e {
        GraphError::Import { .. } => CliError::Parse(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn from_train(e: TrainError) -> CliError {
    match e {
        TrainError::BadConfig(_) => CliError::Validation(e.to_string()),
        TrainError::Graph(g) => from_graph(g),
        TrainError::Ingest(i) => from_ingest(i),
        TrainError::Json(_) => CliError::Parse(e.to_string()),
        TrainError::Model(m) => match m {
            crate::model::ModelError::Diff(_) => CliError::Runtime(m.to_string()),
            _ => CliError::Validation(m.to_string()),
        },
        _ => CliError::Runtime(e.to_string()),
    }
}

#[derive(Parser)]
#[command(
    name = "dagkt",
    version,
    about = "Knowledge tracing over a question-KC graph: ingestion, graph building, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse a raw interaction CSV into canonical per-student sequences.
    Ingest(IngestArgs),
    /// Build the question-KC graph with similarity edges plus the
    /// difficulty and attempt tables.
    BuildGraph(BuildGraphArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Train with student-level cross-validation.
    Train(TrainArgs),
    /// Score a trained fold checkpoint on a canonical corpus.
    Eval(EvalArgs),
    /// Train every model variant and compare their AUC.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// Raw CSV log.
    #[arg(long)]
    pub input: PathBuf,
    /// Canonical JSONL output.
    #[arg(long)]
    pub output: PathBuf,
    /// JSON with column mapping and parse options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write corpus statistics (default: <output>.stats.json).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args)]
pub struct BuildGraphArgs {
    /// Canonical JSONL corpus.
    #[arg(long)]
    pub input: PathBuf,
    /// Graph TSV output; tables are written next to it.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, env = "DAGKT_OMEGA", default_value_t = crate::graph::DEFAULT_OMEGA)]
    pub omega: f64,
    #[arg(long, env = "DAGKT_LAMBDA", default_value_t = crate::graph::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, env = "DAGKT_MIN_SUPPORT", default_value_t = crate::graph::DEFAULT_MIN_SUPPORT)]
    pub min_support: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Canonical JSONL output for the generated corpus.
    #[arg(long)]
    pub output: PathBuf,
    /// Generator spec JSON (defaults used when absent).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DAGKT_SEED")]
    pub seed: Option<u64>,
    /// Where to write the ground truth (default: <output>.truth.json).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Canonical JSONL corpus.
    #[arg(long)]
    pub input: PathBuf,
    /// Graph TSV from build-graph supplying the question/KC structure.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Run directory for checkpoints, metrics, and the report.
    #[arg(long)]
    pub output: PathBuf,
    /// Training config JSON (defaults used when absent).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DAGKT_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "DAGKT_FOLDS")]
    pub folds: Option<usize>,
    /// Model variant: full, R, D, A, DA, or G.
    #[arg(long, env = "DAGKT_VARIANT")]
    pub variant: Option<String>,
    #[arg(long, env = "DAGKT_OMEGA")]
    pub omega: Option<f64>,
    #[arg(long, env = "DAGKT_LAMBDA")]
    pub lambda: Option<f64>,
    #[arg(long, env = "DAGKT_MIN_SUPPORT")]
    pub min_support: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_students: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// A fold checkpoint directory written by train.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Canonical JSONL corpus to score.
    #[arg(long)]
    pub input: PathBuf,
    /// Report output (default: <checkpoint>/eval.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Canonical JSONL corpus.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the comparison table and per-variant metrics.
    #[arg(long)]
    pub output: PathBuf,
    /// Training config JSON applied to every variant.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DAGKT_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "DAGKT_FOLDS")]
    pub folds: Option<usize>,
    /// Comma-separated subset of variants (default: all six).
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_students: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct IngestConfig {
    mapping: ColumnMapping,
    options: ParseOptions,
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub created_unix: u64,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix,
        }
    }

    fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs
            .insert(path.display().to_string(), sha256_hex(bytes));
    }

    fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, &pretty_json(self)?)
    }
}

/// Artifact body plus a pointer back to the manifest that produced it.
#[derive(Serialize)]
struct Annotated<T: Serialize> {
    manifest: String,
    #[serde(flatten)]
    body: T,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn with_manifest_comment(manifest: &str, body: &str) -> String {
    format!("# manifest: {manifest}\n{body}")
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Runtime(format!("serialize: {e}")))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("mkdir {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<(T, serde_json::Value), CliError> {
    match path {
        Some(p) => {
            let bytes = read_file(p)?;
            let value: serde_json::Value = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Parse(format!("config {}: {e}", p.display())))?;
            let parsed: T = serde_json::from_value(value.clone())
                .map_err(|e| CliError::Parse(format!("config {}: {e}", p.display())))?;
            Ok((parsed, value))
        }
        None => Ok((T::default(), serde_json::Value::Null)),
    }
}

fn load_corpus(path: &Path) -> Result<(Vec<StudentSequence>, Vec<u8>), CliError> {
    let bytes = read_file(path)?;
    let seqs = read_sequences(BufReader::new(&bytes[..])).map_err(from_ingest)?;
    if seqs.is_empty() {
        return Err(CliError::Validation(format!(
            "corpus {} contains no sequences",
            path.display()
        )));
    }
    Ok((seqs, bytes))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::BuildGraph(args) => cmd_build_graph(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let (config, config_value) = load_json_config::<IngestConfig>(args.config.as_deref())?;
    let raw = read_file(&args.input)?;
    let sequences = parse_log(&raw[..], &config.mapping, &config.options).map_err(from_ingest)?;
    let stats = compute_stats(&sequences).map_err(from_ingest)?;

    let mut canonical = Vec::new();
    write_sequences(&mut canonical, &sequences).map_err(from_ingest)?;
    let canonical_text =
        String::from_utf8(canonical).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&args.output, &canonical_text)?;

    let manifest_path = with_suffix(&args.output, ".manifest.json");
    let stats_path = args
        .stats
        .unwrap_or_else(|| with_suffix(&args.output, ".stats.json"));
    write_file(
        &stats_path,
        &pretty_json(&Annotated {
            manifest: file_name(&manifest_path),
            body: &stats,
        })?,
    )?;

    let mut manifest = RunManifest::new("ingest", None, config_value);
    manifest.record_input(&args.input, &raw);
    manifest.record_output(&args.output);
    manifest.record_output(&stats_path);
    manifest.write(&manifest_path)?;

    println!(
        "ingested {} sequences ({} logs, {} questions, {} skills)",
        stats.n_students, stats.n_logs, stats.n_questions, stats.n_skills
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_build_graph(args: BuildGraphArgs) -> Result<(), CliError> {
    let (sequences, input_bytes) = load_corpus(&args.input)?;
    let graph =
        build_graph(&sequences, args.omega, args.lambda, args.min_support).map_err(from_graph)?;
    let manifest_path = with_suffix(&args.output, ".manifest.json");
    let manifest_name = file_name(&manifest_path);
    write_file(
        &args.output,
        &with_manifest_comment(&manifest_name, &export_tsv(&graph)),
    )?;

    let difficulty = crate::graph::compute_difficulty(&sequences);
    let attempts = crate::graph::compute_attempts(&sequences);
    let difficulty_path = with_suffix(&args.output, ".difficulty.csv");
    let attempts_path = with_suffix(&args.output, ".attempts.csv");
    write_file(
        &difficulty_path,
        &with_manifest_comment(&manifest_name, &difficulty.export_csv()),
    )?;
    write_file(
        &attempts_path,
        &with_manifest_comment(&manifest_name, &attempts.export_csv()),
    )?;

    let config = serde_json::json!({
        "omega": args.omega,
        "lambda": args.lambda,
        "min_support": args.min_support,
    });
    let mut manifest = RunManifest::new("build-graph", None, config);
    manifest.record_input(&args.input, &input_bytes);
    manifest.record_output(&args.output);
    manifest.record_output(&difficulty_path);
    manifest.record_output(&attempts_path);
    manifest.write(&manifest_path)?;

    println!(
        "graph: {} questions, {} KCs, {} question-KC edges, {} similarity edges",
        graph.questions.len(),
        graph.kcs.len(),
        graph.qk_edges.len(),
        graph.qq_edges.len()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let (mut spec, _) = load_json_config::<SynthSpec>(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (sequences, truth) = generate_synthetic(&spec).map_err(from_train)?;

    let mut canonical = Vec::new();
    write_sequences(&mut canonical, &sequences).map_err(from_ingest)?;
    write_file(
        &args.output,
        &String::from_utf8(canonical).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    let manifest_path = with_suffix(&args.output, ".manifest.json");
    let truth_path = args
        .truth
        .unwrap_or_else(|| with_suffix(&args.output, ".truth.json"));
    write_file(
        &truth_path,
        &pretty_json(&Annotated {
            manifest: file_name(&manifest_path),
            body: &truth,
        })?,
    )?;

    let config_value =
        serde_json::to_value(&spec).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut manifest = RunManifest::new("synth", Some(spec.seed), config_value);
    manifest.record_output(&args.output);
    manifest.record_output(&truth_path);
    manifest.write(&manifest_path)?;

    println!(
        "generated {} students x {} records ({} planted pairs)",
        spec.n_students, spec.seq_len, spec.planted_pairs
    );
    Ok(())
}

/// Applies flag overrides on top of a config file; flags win.
fn resolve_train_config(
    file_config: TrainConfig,
    seed: Option<u64>,
    folds: Option<usize>,
    variant: Option<&str>,
    omega: Option<f64>,
    lambda: Option<f64>,
    min_support: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    max_students: Option<usize>,
) -> Result<TrainConfig, CliError> {
    let mut config = file_config;
    if let Some(v) = seed {
        config.seed = v;
    }
    if let Some(v) = folds {
        config.folds = v;
    }
    if let Some(name) = variant {
        let v = Variant::parse(name).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown variant {name:?}; expected one of full, R, D, A, DA, G"
            ))
        })?;
        config.model = config.model.with_variant(v);
    }
    if let Some(v) = omega {
        config.omega = v;
    }
    if let Some(v) = lambda {
        config.lambda = v;
    }
    if let Some(v) = min_support {
        config.min_support = v;
    }
    if let Some(v) = epochs {
        config.epochs = v;
    }
    if let Some(v) = batch_size {
        config.batch_size = v;
    }
    if let Some(v) = learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = max_students {
        config.max_students = Some(v);
    }
    config.validate().map_err(from_train)?;
    Ok(config)
}

/// Per-fold checkpoint metadata; ties the saved parameters to the graph
/// bytes they were trained against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldMeta {
    #[serde(default)]
    pub manifest: String,
    pub fold: usize,
    pub seed: u64,
    pub variant: String,
    pub graph_hash: String,
    pub model: ModelConfig,
    pub best_epoch: usize,
    pub test_auc: f64,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (file_config, _) = load_json_config::<TrainConfig>(args.config.as_deref())?;
    let config = resolve_train_config(
        file_config,
        args.seed,
        args.folds,
        args.variant.as_deref(),
        args.omega,
        args.lambda,
        args.min_support,
        args.epochs,
        args.batch_size,
        args.learning_rate,
        args.max_students,
    )?;
    let (sequences, corpus_bytes) = load_corpus(&args.input)?;

    let mut base_graph: Option<QKGraph> = None;
    let mut graph_bytes: Option<Vec<u8>> = None;
    if let Some(graph_path) = &args.graph {
        let bytes = read_file(graph_path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|e| CliError::Parse(format!("graph {}: {e}", graph_path.display())))?;
        base_graph = Some(import_tsv(&text).map_err(from_graph)?);
        graph_bytes = Some(bytes);
    }

    let (report, outcomes) = run_cv(&config, &sequences, base_graph.as_ref()).map_err(from_train)?;

    fs::create_dir_all(&args.output)
        .map_err(|e| CliError::Runtime(format!("mkdir {}: {e}", args.output.display())))?;
    write_file(
        &args.output.join("config.json"),
        &pretty_json(&Annotated {
            manifest: "manifest.json".into(),
            body: &config,
        })?,
    )?;

    let mut metrics = String::new();
    for outcome in &outcomes {
        for record in &outcome.epochs {
            metrics.push_str(
                &serde_json::to_string(record).map_err(|e| CliError::Runtime(e.to_string()))?,
            );
            metrics.push('\n');
        }
    }
    let metrics_path = args.output.join("metrics.jsonl");
    write_file(&metrics_path, &metrics)?;
    write_file(
        &args.output.join("report.json"),
        &pretty_json(&Annotated {
            manifest: "manifest.json".into(),
            body: &report,
        })?,
    )?;

    // fold dirs are self-contained: parameters, the fold's graph, and the
    // train-side tables, so eval never touches training inputs again
    let working = match config.max_students {
        Some(cap) => crate::train::trainer::subsample_students(&sequences, cap, config.seed),
        None => sequences.clone(),
    };
    let splits = make_folds(&working, config.folds, config.seed).map_err(from_ingest)?;
    for (split, outcome) in splits.iter().zip(&outcomes) {
        let art = fold_artifacts(
            &working,
            &split.train_ids,
            &split.test_ids,
            split.fold_index,
            &config,
            base_graph.as_ref(),
        )
        .map_err(from_train)?;
        let fold_dir = args.output.join(format!("fold{}", split.fold_index));
        fs::create_dir_all(&fold_dir)
            .map_err(|e| CliError::Runtime(format!("mkdir {}: {e}", fold_dir.display())))?;
        checkpoint::save(&outcome.best_params, &fold_dir)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let fold_graph_tsv = with_manifest_comment("../manifest.json", &export_tsv(&art.graph));
        write_file(&fold_dir.join("graph.tsv"), &fold_graph_tsv)?;
        write_file(
            &fold_dir.join("difficulty.csv"),
            &with_manifest_comment("../manifest.json", &art.difficulty.export_csv()),
        )?;
        write_file(
            &fold_dir.join("attempts.csv"),
            &with_manifest_comment("../manifest.json", &art.attempts.export_csv()),
        )?;
        let meta = FoldMeta {
            manifest: "../manifest.json".into(),
            fold: split.fold_index,
            seed: config.seed,
            variant: report.variant.clone(),
            graph_hash: sha256_hex(fold_graph_tsv.as_bytes()),
            model: config.model.clone(),
            best_epoch: outcome.best_epoch,
            test_auc: outcome.best_auc,
        };
        write_file(&fold_dir.join("meta.json"), &pretty_json(&meta)?)?;
    }

    let config_value =
        serde_json::to_value(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut manifest = RunManifest::new("train", Some(config.seed), config_value);
    manifest.record_input(&args.input, &corpus_bytes);
    if let (Some(path), Some(bytes)) = (&args.graph, &graph_bytes) {
        manifest.record_input(path, bytes);
    }
    manifest.record_output(&args.output.join("config.json"));
    manifest.record_output(&metrics_path);
    manifest.record_output(&args.output.join("report.json"));
    for split in &splits {
        manifest.record_output(&args.output.join(format!("fold{}", split.fold_index)));
    }
    manifest.write(&args.output.join("manifest.json"))?;

    println!(
        "trained variant {} over {} folds: mean best AUC {:.4}",
        report.variant,
        report.folds.len(),
        report.mean_auc
    );
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(default)]
    pub manifest: String,
    pub checkpoint: String,
    pub input: String,
    pub variant: String,
    pub n_sequences: usize,
    pub n_events: usize,
    pub auc: f64,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let meta_bytes = read_file(&args.checkpoint.join("meta.json"))?;
    let meta: FoldMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| CliError::Parse(format!("meta.json: {e}")))?;

    let graph_bytes = read_file(&args.checkpoint.join("graph.tsv"))?;
    let got_hash = sha256_hex(&graph_bytes);
    if got_hash != meta.graph_hash {
        return Err(CliError::Validation(format!(
            "graph hash mismatch: checkpoint was trained against {}, found {}; refusing to evaluate",
            &meta.graph_hash[..12],
            &got_hash[..12]
        )));
    }
    let graph_text =
        String::from_utf8(graph_bytes).map_err(|e| CliError::Parse(format!("graph.tsv: {e}")))?;
    let graph = import_tsv(&graph_text).map_err(from_graph)?;

    let difficulty_text = read_file(&args.checkpoint.join("difficulty.csv"))?;
    let difficulty = DifficultyTable::import_csv(
        &String::from_utf8(difficulty_text).map_err(|e| CliError::Parse(e.to_string()))?,
    )
    .map_err(from_graph)?;
    let attempts_text = read_file(&args.checkpoint.join("attempts.csv"))?;
    let attempts = AttemptTable::import_csv(
        &String::from_utf8(attempts_text).map_err(|e| CliError::Parse(e.to_string()))?,
    )
    .map_err(from_graph)?;

    let (sequences, corpus_bytes) = load_corpus(&args.input)?;

    let mut model = DagktModel::init(meta.model.clone(), &graph, meta.seed)
        .map_err(|e| from_train(TrainError::Model(e)))?;
    model
        .load_params(&args.checkpoint)
        .map_err(|e| from_train(TrainError::Model(e)))?;

    let d_table = meta.model.use_difficulty.then_some(&difficulty);
    let m_table = meta.model.use_attempts.then_some(&attempts);
    let resolved = model
        .resolve(&sequences, d_table, m_table)
        .map_err(|e| from_train(TrainError::Model(e)))?;

    let eval_seed = crate::seeding::derive_seed(
        meta.seed,
        &[crate::seeding::stream::NEIGHBOR_SAMPLE, meta.fold as u64, u64::MAX],
    );
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for seq in &resolved {
        let out = model
            .forward_sequence(seq, eval_seed)
            .map_err(|e| from_train(TrainError::Model(e)))?;
        preds.extend(out.predictions);
        labels.extend(out.labels);
    }
    let auc = crate::train::auc(&labels, &preds).map_err(from_train)?;

    let out_path = args
        .output
        .unwrap_or_else(|| args.checkpoint.join("eval.json"));
    let manifest_path = with_suffix(&out_path, ".manifest.json");
    let output = EvalOutput {
        manifest: file_name(&manifest_path),
        checkpoint: args.checkpoint.display().to_string(),
        input: args.input.display().to_string(),
        variant: meta.variant.clone(),
        n_sequences: resolved.len(),
        n_events: labels.len(),
        auc,
    };
    write_file(&out_path, &pretty_json(&output)?)?;

    let mut manifest = RunManifest::new(
        "eval",
        Some(meta.seed),
        serde_json::to_value(&meta).map_err(|e| CliError::Runtime(e.to_string()))?,
    );
    manifest.record_input(&args.input, &corpus_bytes);
    manifest.record_output(&out_path);
    manifest.write(&manifest_path)?;

    println!("AUC {:.4} over {} events", auc, labels.len());
    Ok(())
}

/// One row of the variant comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub use_difficulty: bool,
    pub use_attempts: bool,
    pub use_similarity_edges: bool,
    pub mean_auc: f64,
    pub fold_aucs: Vec<f64>,
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let (file_config, _) = load_json_config::<TrainConfig>(args.config.as_deref())?;
    let base = resolve_train_config(
        file_config,
        args.seed,
        args.folds,
        None,
        None,
        None,
        None,
        args.epochs,
        args.batch_size,
        args.learning_rate,
        args.max_students,
    )?;
    let variants: Vec<Variant> = match &args.variants {
        None => Variant::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(|name| {
                Variant::parse(name.trim()).ok_or_else(|| {
                    CliError::Validation(format!("unknown variant {:?} in --variants", name.trim()))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let (sequences, corpus_bytes) = load_corpus(&args.input)?;

    fs::create_dir_all(&args.output)
        .map_err(|e| CliError::Runtime(format!("mkdir {}: {e}", args.output.display())))?;

    let mut rows = Vec::new();
    let mut reports: Vec<EvalReport> = Vec::new();
    for variant in &variants {
        let mut config = base.clone();
        config.model = config.model.with_variant(*variant);
        let (report, outcomes) = run_cv(&config, &sequences, None).map_err(from_train)?;

        let mut metrics = String::new();
        for outcome in &outcomes {
            for record in &outcome.epochs {
                metrics.push_str(
                    &serde_json::to_string(record)
                        .map_err(|e| CliError::Runtime(e.to_string()))?,
                );
                metrics.push('\n');
            }
        }
        write_file(
            &args.output.join(format!("metrics_{}.jsonl", variant.name())),
            &metrics,
        )?;

        let (d, a, g) = variant.flags();
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            use_difficulty: d,
            use_attempts: a,
            use_similarity_edges: g,
            mean_auc: report.mean_auc,
            fold_aucs: report.folds.iter().map(|f| f.test_auc).collect(),
        });
        reports.push(report);
    }

    #[derive(Serialize)]
    struct AblationTable {
        manifest: String,
        variants: Vec<AblationRow>,
    }
    let table_path = args.output.join("ablation.json");
    write_file(
        &table_path,
        &pretty_json(&AblationTable {
            manifest: "manifest.json".into(),
            variants: rows.clone(),
        })?,
    )?;

    let config_value = serde_json::to_value(&base).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut manifest = RunManifest::new("ablate", Some(base.seed), config_value);
    manifest.record_input(&args.input, &corpus_bytes);
    manifest.record_output(&table_path);
    manifest.write(&args.output.join("manifest.json"))?;

    let mut stdout = std::io::stdout().lock();
    for row in &rows {
        let _ = writeln!(stdout, "{:>5}  mean AUC {:.4}", row.variant, row.mean_auc);
    }
    Ok(())
}
