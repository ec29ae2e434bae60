//! Batch driver: one manuscript, one session, one HTML report.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | report written |
//! | 1 | internal or storage error |
//! | 2 | usage error (bad flags, invalid config) |
//! | 3 | manuscript not found, unreadable or empty |
//! | 4 | unsupported manuscript format |
//! | 5 | criteria file missing or invalid |
//! | 6 | model backend error (timeout, auth, rate limit, backend failure) |
//! | 7 | model response could not be parsed |
//! | 8 | nothing to report (no annotations) |
//! | 9 | report could not be written |

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use thiserror::Error;

use marginalia_core::config::{ConfigError, EngineConfig};
use marginalia_core::criteria::{default_criteria, import_json, import_xml, CriteriaError, CriteriaSet};
use marginalia_core::engine::{Engine, EngineError};
use marginalia_core::gateway::BackendKind;
use marginalia_core::model::{ReportStructure, Sentiment};
use marginalia_core::store::{SessionId, SourceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum By {
    #[value(name = "by_criteria", alias = "criteria")]
    Criteria,
    #[value(name = "by_sentiment", alias = "sentiment")]
    Sentiment,
}

impl From<By> for ReportStructure {
    fn from(b: By) -> Self {
        match b {
            By::Criteria => ReportStructure::ByCriteria,
            By::Sentiment => ReportStructure::BySentiment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Http,
}

/// Annotate a manuscript against review criteria and write an HTML report.
#[derive(Debug, Parser)]
#[command(name = "marginalia", version)]
pub struct Args {
    /// Manuscript to review (PDF with a text layer, or UTF-8 text).
    #[arg(long)]
    pub manuscript: PathBuf,
    /// Criteria file (XML or JSON), or `default`.
    #[arg(long, default_value = "default")]
    pub criteria: String,
    /// Report structure.
    #[arg(long, value_enum, default_value = "by_criteria")]
    pub by: By,
    /// Where to write the HTML report.
    #[arg(long)]
    pub out: PathBuf,
    /// Excerpts requested per criterion (config default when omitted).
    #[arg(long)]
    pub num_excerpts: Option<usize>,
    /// Model backend; overrides the config file.
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Mock fixture directory; overrides the config file.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Engine configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Session storage directory; overrides the config file.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Keep the session directory instead of deleting it (debugging).
    #[arg(long)]
    pub keep_session: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("manuscript {path}: {source}")]
    Manuscript { path: PathBuf, source: io::Error },
    #[error("criteria {path}: {source}")]
    CriteriaFile { path: PathBuf, source: io::Error },
    #[error("criteria {path}: {source}")]
    Criteria { path: PathBuf, source: CriteriaError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write report {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("{criterion}: {source}")]
    Criterion { criterion: String, source: EngineError },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn engine_exit_code(e: &EngineError) -> i32 {
    match e.code() {
        "EmptyInput" => 3,
        "UnsupportedFormat" => 4,
        "DuplicateName" | "EmptyCriteria" | "InvalidCriteria" => 5,
        "Timeout" | "AuthFailure" | "RateLimited" | "BackendError" => 6,
        "UnparseableResponse" | "EmptyItems" => 7,
        "EmptyReview" | "NoAnnotations" => 8,
        "ConfigError" => 2,
        _ => 1,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Manuscript { .. } => 3,
            CliError::CriteriaFile { .. } | CliError::Criteria { .. } => 5,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Output { .. } => 9,
            CliError::Criterion { source, .. } | CliError::Engine(source) => engine_exit_code(source),
        }
    }

    /// Stable error name printed with the message.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Manuscript { source, .. } if source.kind() == io::ErrorKind::NotFound => "NotFound",
            CliError::Manuscript { .. } => "Unreadable",
            CliError::CriteriaFile { .. } => "CriteriaNotReadable",
            CliError::Criteria { .. } => "InvalidCriteria",
            CliError::Config(_) => "ConfigError",
            CliError::Usage(_) => "Usage",
            CliError::Output { .. } => "OutputError",
            CliError::Criterion { source, .. } | CliError::Engine(source) => source.code(),
        }
    }
}

/// Per-criterion counts for the summary table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub criterion: String,
    pub annotations: usize,
    pub strengths: usize,
    pub weaknesses: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub session_id: SessionId,
    pub rows: Vec<SummaryRow>,
    pub kept: bool,
}

pub fn load_criteria(arg: &str) -> Result<CriteriaSet, CliError> {
    if arg == "default" {
        return Ok(default_criteria());
    }
    let path = PathBuf::from(arg);
    let bytes = std::fs::read(&path).map_err(|source| CliError::CriteriaFile {
        path: path.clone(),
        source,
    })?;
    let is_xml = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("xml") => true,
        Some(ext) if ext.eq_ignore_ascii_case("json") => false,
        _ => bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'<'),
    };
    let parsed = if is_xml { import_xml(&bytes) } else { import_json(&bytes) };
    parsed.map_err(|source| CliError::Criteria { path, source })
}

pub fn build_config(args: &Args) -> Result<EngineConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(root) = &args.data_root {
        config.data_root = root.clone();
    }
    if let Some(b) = args.backend {
        config.llm.backend = match b {
            Backend::Mock => BackendKind::Mock,
            Backend::Http => BackendKind::Http,
        };
    }
    if let Some(dir) = &args.fixtures {
        config.llm.fixture_dir = Some(dir.clone());
    }
    if args.num_excerpts == Some(0) {
        return Err(CliError::Usage("--num-excerpts must be at least 1".into()));
    }
    config.validate()?;
    Ok(config)
}

fn check_output(path: &Path) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(CliError::Output {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist"),
        });
    }
    Ok(())
}

/// Ingest, annotate every criterion, compile, build the report and write
/// it. The session is ended afterwards, on failure too, unless
/// `keep_session` is set.
pub fn run(args: &Args) -> Result<RunOutcome, CliError> {
    let config = build_config(args)?;
    let criteria = load_criteria(&args.criteria)?;
    check_output(&args.out)?;
    let bytes = std::fs::read(&args.manuscript).map_err(|source| CliError::Manuscript {
        path: args.manuscript.clone(),
        source,
    })?;

    let engine = Engine::new(config)?;
    let id = engine.create_session(&bytes, SourceKind::sniff(&bytes))?;
    let result = review(&engine, &id, criteria, args);
    if !args.keep_session {
        engine.end_session(&id)?;
    }
    let rows = result?;
    Ok(RunOutcome {
        session_id: id,
        rows,
        kept: args.keep_session,
    })
}

fn review(engine: &Engine, id: &SessionId, criteria: CriteriaSet, args: &Args) -> Result<Vec<SummaryRow>, CliError> {
    engine.set_criteria(id, criteria)?;
    for (criterion, result) in engine.annotate_all(id, args.num_excerpts)? {
        result.map_err(|source| CliError::Criterion { criterion, source })?;
    }
    let review = engine.review(id)?;
    let mut rows = Vec::new();
    for cr in &review.criterion_reviews {
        let live: Vec<_> = cr.live().collect();
        rows.push(SummaryRow {
            criterion: cr.criterion.name.clone(),
            annotations: live.len(),
            strengths: live.iter().filter(|a| a.sentiment == Sentiment::Strength).count(),
            weaknesses: live.iter().filter(|a| a.sentiment == Sentiment::Weakness).count(),
        });
        if cr.has_annotations() {
            let name = cr.criterion.name.clone();
            engine
                .compile_criterion(id, &name)
                .map_err(|source| CliError::Criterion { criterion: name, source })?;
        }
    }
    engine.build_report(id, args.by.into())?;
    let html = engine.export_report_html(id)?;
    std::fs::write(&args.out, html).map_err(|source| CliError::Output {
        path: args.out.clone(),
        source,
    })?;
    Ok(rows)
}

/// Aligned plain-text table of the per-criterion counts.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let header = ["criterion", "annotations", "strengths", "weaknesses"];
    let width = rows
        .iter()
        .map(|r| r.criterion.chars().count())
        .chain([header[0].len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>11}  {:>9}  {:>10}", header[0], header[1], header[2], header[3]);
    for r in rows {
        let pad = width - r.criterion.chars().count();
        let _ = writeln!(
            out,
            "{}{}  {:>11}  {:>9}  {:>10}",
            r.criterion,
            " ".repeat(pad),
            r.annotations,
            r.strengths,
            r.weaknesses
        );
    }
    out
}
