//! `hs-assist` command line. Standard output carries data only; logs and
//! errors go to standard error.

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hs_assist::corpus::{
    heading_frequency, load_cases, load_knowledge_base, load_manual, temporal_split, KnowledgeBase, Manual,
};
use hs_assist::encoder::{
    calibrate_temperature, load_artifact, save_artifact, train_with_history, EncoderConfig, ModelArtifact, Resources,
};
use hs_assist::eval::{evaluate, generate_synthetic_corpus, EvalOptions, SyntheticSpec};
use hs_assist::report::{build_report, render, Format, ReportOptions};
use hs_assist::retrieval::RetrievalConfig;
use hs_assist::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hs-assist",
    version,
    about = "HS code suggestions with evidence from the HS manual"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate cases, manual and knowledge base and print a summary.
    Ingest(IngestArgs),
    /// Train an encoder, calibrate it and write a model artifact.
    Train(TrainArgs),
    /// Print a suggestion report for one description.
    Predict(PredictArgs),
    /// Evaluate a model on the held-out test slice.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub manual: PathBuf,
    #[arg(long)]
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Cases before the test slice used for model selection and calibration.
    #[arg(long, default_value_t = 100)]
    pub n_val: usize,
    /// Newest cases held out for evaluation.
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub manual: PathBuf,
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Keep temperature 1 instead of fitting it on the validation slice.
    #[arg(long)]
    pub no_calibrate: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Html,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 7)]
    pub sentences: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Manual to use instead of the one bundled with the model.
    #[arg(long)]
    pub manual: Option<PathBuf>,
    /// Knowledge base to use instead of the one bundled with the model.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Report timestamp (RFC 3339); defaults to now.
    #[arg(long)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub manual: Option<PathBuf>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub sentences: usize,
    #[arg(long, value_enum, default_value_t = EvalFormat::Table)]
    pub format: EvalFormat,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Defaults to HS_ASSIST_MODEL_PATH.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Defaults to HS_ASSIST_BIND_ADDR, then 127.0.0.1:8080.
    #[arg(long)]
    pub bind: Option<String>,
    /// Defaults to HS_ASSIST_CORS_ORIGIN.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON object with any `SyntheticSpec` fields; omitted fields keep defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error[{}]: {e}", e.code());
            EXIT_VALIDATION
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> hs_assist::Result<()> {
    match command {
        Command::Ingest(a) => ingest(a, stdout),
        Command::Train(a) => train(a, stdout, stderr),
        Command::Predict(a) => predict(a, stdout),
        Command::Evaluate(a) => evaluate_cmd(a, stdout),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a, stdout),
    }
}

fn emit(stdout: &mut dyn Write, bytes: &[u8]) -> hs_assist::Result<()> {
    stdout
        .write_all(bytes)
        .and_then(|_| stdout.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn emit_json(stdout: &mut dyn Write, value: &serde_json::Value) -> hs_assist::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json value serializes");
    bytes.push(b'\n');
    emit(stdout, &bytes)
}

fn ingest(a: IngestArgs, stdout: &mut dyn Write) -> hs_assist::Result<()> {
    let cases = load_cases(&a.cases)?;
    let manual = load_manual(&a.manual)?;
    let kb = a.kb.as_ref().map(|p| load_knowledge_base(p, &manual)).transpose()?;
    let freq = heading_frequency(&cases);
    let uncovered: Vec<String> = freq
        .keys()
        .filter(|h| !manual.contains(h))
        .map(|h| h.to_string())
        .collect();
    let labels: std::collections::BTreeSet<_> = cases.iter().map(|c| &c.label).collect();
    emit_json(
        stdout,
        &json!({
            "cases": cases.len(),
            "labels": labels.len(),
            "headings": freq.len(),
            "first_date": cases.as_slice().first().map(|c| c.date.to_string()),
            "last_date": cases.as_slice().last().map(|c| c.date.to_string()),
            "manual_headings": manual.len(),
            "manual_sentences": manual.sentences().count(),
            "headings_missing_from_manual": uncovered,
            "kb_entries": kb.as_ref().map(KnowledgeBase::len),
            "kb_dropped_quotes": kb.as_ref().map(KnowledgeBase::dropped_quotes),
            "kb_warnings": kb.as_ref().map(|k| k.warnings().to_vec()),
        }),
    )
}

fn train(a: TrainArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> hs_assist::Result<()> {
    let cases = load_cases(&a.cases)?;
    let manual = load_manual(&a.manual)?;
    let kb = load_knowledge_base(&a.kb, &manual)?;
    if !kb.warnings().is_empty() {
        let _ = writeln!(
            stderr,
            "warning: {} knowledge-base quotes could not be resolved",
            kb.dropped_quotes()
        );
    }
    let (train_cases, val, test) = temporal_split(&cases, a.split.n_val, a.split.n_test)?;
    let config = EncoderConfig {
        dim: a.dim,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        min_count: a.min_count,
    };
    let outcome = train_with_history(&train_cases, &val, &config)?;
    let (model, calibration) = if a.no_calibrate || val.is_empty() {
        (outcome.model, None)
    } else {
        let (m, report) = calibrate_temperature(&outcome.model, &val)?;
        (m, Some(report))
    };
    save_artifact(&a.out, &model, Some(&Resources { manual, kb }))?;
    emit_json(
        stdout,
        &json!({
            "artifact": a.out.display().to_string(),
            "model_version": model.version(),
            "train_cases": train_cases.len(),
            "val_cases": val.len(),
            "test_cases": test.len(),
            "labels": model.num_labels(),
            "vocabulary": model.vocab().len(),
            "initial_loss": outcome.initial_loss,
            "best_epoch": outcome.best_epoch,
            "history": outcome.history,
            "temperature": model.temperature(),
            "calibration": calibration,
        }),
    )
}

fn load_model(
    path: &Path,
    manual: Option<&PathBuf>,
    kb: Option<&PathBuf>,
) -> hs_assist::Result<(ModelArtifact, Manual, KnowledgeBase)> {
    let (model, bundled) = load_artifact(path)?;
    let manual = match (manual, &bundled) {
        (Some(p), _) => load_manual(p)?,
        (None, Some(r)) => r.manual.clone(),
        (None, None) => {
            return Err(Error::Config(format!(
                "{} bundles no manual; pass --manual",
                path.display()
            )))
        }
    };
    let kb = match (kb, &bundled) {
        (Some(p), _) => load_knowledge_base(p, &manual)?,
        (None, Some(r)) if manual == r.manual => r.kb.clone(),
        (None, Some(r)) => {
            let mut bytes = Vec::new();
            r.kb.write_jsonl(&mut bytes).map_err(|e| Error::io("<kb>", e))?;
            KnowledgeBase::parse(bytes.as_slice(), &manual)?
        }
        (None, None) => KnowledgeBase::default(),
    };
    Ok((model, manual, kb))
}

fn retrieval_config(lambda: Option<f64>, n_sentences: usize) -> RetrievalConfig {
    let defaults = RetrievalConfig::default();
    RetrievalConfig {
        lambda: lambda.unwrap_or(defaults.lambda),
        n_sentences,
        ..defaults
    }
}

fn predict(a: PredictArgs, stdout: &mut dyn Write) -> hs_assist::Result<()> {
    let (model, manual, kb) = load_model(&a.model, a.manual.as_ref(), a.kb.as_ref())?;
    let options = ReportOptions {
        k: a.k,
        retrieval: retrieval_config(a.lambda, a.sentences),
        generated_at: a.timestamp.unwrap_or_else(Utc::now),
    };
    let report = build_report(&model, &manual, &kb, &a.text, &options)?;
    let format = match a.format {
        ReportFormat::Json => Format::Json,
        ReportFormat::Html => Format::Html,
    };
    emit(stdout, &render(&report, format))
}

fn evaluate_cmd(a: EvaluateArgs, stdout: &mut dyn Write) -> hs_assist::Result<()> {
    let (model, manual, kb) = load_model(&a.model, a.manual.as_ref(), a.kb.as_ref())?;
    let cases = load_cases(&a.cases)?;
    let (train_cases, _, test) = temporal_split(&cases, a.split.n_val, a.split.n_test)?;
    if test.is_empty() {
        return Err(Error::Config("the test slice is empty; pass --n-test".into()));
    }
    let options = EvalOptions {
        retrieval: retrieval_config(a.lambda, a.sentences),
        ..EvalOptions::default()
    };
    let result = evaluate(&model, &test, &heading_frequency(&train_cases), &manual, &kb, &options)?;
    match a.format {
        EvalFormat::Table => emit(stdout, result.table().as_bytes()),
        EvalFormat::Json => emit_json(stdout, &serde_json::to_value(&result).expect("eval result serializes")),
    }
}

fn serve(a: ServeArgs) -> hs_assist::Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .try_init();
    let mut config = hs_assist_service::ServiceConfig::from_env();
    if a.model.is_some() {
        config.model_path = a.model;
    }
    if a.bind.is_some() {
        config.bind_addr = a.bind;
    }
    if a.cors_origin.is_some() {
        config.cors_origin = a.cors_origin;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    let addr = config
        .bind_addr
        .clone()
        .unwrap_or_else(|| hs_assist_service::DEFAULT_BIND_ADDR.into());
    runtime
        .block_on(hs_assist_service::serve(config))
        .map_err(|e| Error::io(addr, e))
}

fn synth(a: SynthArgs, stdout: &mut dyn Write) -> hs_assist::Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = generate_synthetic_corpus(&spec)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    corpus.write_to_dir(&a.out_dir)?;
    emit_json(
        stdout,
        &json!({
            "out_dir": a.out_dir.display().to_string(),
            "cases": corpus.cases.len(),
            "manual_headings": corpus.manual.len(),
            "kb_entries": corpus.kb.len(),
            "n_val": spec.n_val,
            "n_test": spec.n_test,
        }),
    )
}
