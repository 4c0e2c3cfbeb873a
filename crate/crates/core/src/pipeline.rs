//! End-to-end orchestration behind the command-line tool.
//!
//! Every command reads its inputs from the config and from earlier stages'
//! files in the run directory (`<output.dir>/run-<config hash>/`), so stages
//! can be run one at a time or all together. Outputs are deterministic for
//! fixed inputs; only `manifest.json` (timestamp) and the gateway checkpoints
//! (latencies) vary between reruns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonicalizer::{canonicalize, coverage, frequency_report, AliasTables, CanonicalMention, CoverageReport, PartyUniverse};
use crate::config::{ConfigError, InvalidMethodPolicy, PipelineConfig};
use crate::corpus::{dedupe, filter_by_queries, load_corpus, load_query_sets, TweetRecord};
use crate::evaluator::{abs_error, pairwise_model_deviation, winner, DeviationReport, EvalError, Precision};
use crate::extractor::{extract_for, stage_histogram, ExtractionResult, Stage};
use crate::gateway::{annotate_corpus, AnnotateStats, AnnotationStatus, CompletionBackend, HttpBackend, RawAnnotation};
use crate::polls::{all_pollster_shares, consensus_table, dispersion, load_polls, PollType};
use crate::prompt_kit::{load_manifest, template_for, ChatFamily, PromptTemplate};
use crate::types::{load_percent_tables, whole_percent, Party, ShareTable, State};
use crate::voteshare::{aggregate, all_methods, ensemble_of, Method, ShareError, ENSEMBLE_SOURCE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_SUFFIX: &str = ".checkpoint.jsonl";
pub const ACTUAL_SOURCE: &str = "ACTUAL";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl PipelineError {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Backend(_) => 4,
            PipelineError::Io { .. } => 1,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn data(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn missing_stage(path: &Path, command: &str) -> PipelineError {
    PipelineError::Data(format!("{} not found; run `votecast {command}` first", path.display()))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    w.into_inner().expect("in-memory writer")
}

fn csv_header_only(header: &[&str]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("header");
    w.into_inner().expect("in-memory writer")
}

fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn pct(fraction: f64) -> f64 {
    fraction * 100.0
}

// ---------------------------------------------------------------- results

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FileStats {
    pub path: String,
    pub loaded: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestStats {
    pub files: Vec<FileStats>,
    pub loaded: usize,
    pub skipped: usize,
    pub duplicates: usize,
    pub unmatched: usize,
    pub kept: usize,
    /// Records matching each query set.
    pub per_query_set: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractSummary {
    pub family: String,
    pub annotations: usize,
    pub failed_annotations: usize,
    pub stages: BTreeMap<String, usize>,
    pub mentions: usize,
    pub canonical: usize,
    pub unresolved: usize,
    pub party_coverage: CoverageReport,
    pub state_coverage: CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSummary {
    pub family: String,
    pub tables: Vec<ShareTable>,
    pub unpredictable: Vec<State>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollSummary {
    pub pollster_tables: usize,
    pub excluded: Vec<String>,
    pub rejected_rows: usize,
    pub consensus: Vec<ShareTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceDeviation {
    pub source: String,
    pub precision: Precision,
    pub reports: Vec<DeviationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinnerCall {
    pub source: String,
    pub state: State,
    pub winners: Vec<Party>,
    pub share_pct: f64,
    pub tie: bool,
    pub matches_actual: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub against_actual: Vec<SourceDeviation>,
    pub pairwise: Vec<DeviationReport>,
    pub winners: Vec<WinnerCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub ingest: Option<IngestStats>,
    pub annotate: BTreeMap<String, AnnotateStats>,
    pub extract: Vec<ExtractSummary>,
    pub aggregate: Vec<AggregateSummary>,
    pub polls: Option<PollSummary>,
    pub compare: Option<CompareSummary>,
}

// ------------------------------------------------------------ row shapes

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    tweet_id: String,
    prompt_family: String,
    prompt_sha256: String,
    raw_output: String,
    attempts: u32,
    status: AnnotationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl From<&RawAnnotation> for AnnotationRow {
    fn from(a: &RawAnnotation) -> Self {
        AnnotationRow {
            tweet_id: a.tweet_id.clone(),
            prompt_family: a.prompt_family.clone(),
            prompt_sha256: a.prompt_sha256.clone(),
            raw_output: a.raw_output.clone(),
            attempts: a.attempts,
            status: a.status,
            error: a.error.clone(),
        }
    }
}

#[derive(Serialize)]
struct MentionRow<'a> {
    tweet_id: &'a str,
    stage: Stage,
    party_raw: &'a str,
    state_raw: &'a str,
    sentiment: f64,
}

#[derive(Serialize)]
struct ShareRow<'a> {
    source: &'a str,
    state: &'a State,
    party: &'a Party,
    share: f64,
    percent: f64,
    percent_whole: f64,
}

fn share_rows(tables: &[ShareTable]) -> Vec<ShareRow<'_>> {
    tables
        .iter()
        .flat_map(|t| {
            t.shares.iter().map(move |(p, &v)| ShareRow {
                source: &t.source,
                state: &t.state,
                party: p,
                share: v,
                percent: pct(v),
                percent_whole: whole_percent(v),
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct ShareRowIn {
    source: String,
    state: State,
    party: Party,
    share: f64,
}

fn read_share_tables(path: &Path, prefix: &str) -> Result<Vec<ShareTable>> {
    let mut tables: Vec<ShareTable> = Vec::new();
    for r in read_csv::<ShareRowIn>(path)? {
        let source = format!("{prefix}{}", r.source);
        match tables.iter_mut().find(|t| t.source == source && t.state == r.state) {
            Some(t) => {
                t.shares.insert(r.party, r.share);
            }
            None => tables.push(ShareTable::new(source, r.state, BTreeMap::from([(r.party, r.share)]))),
        }
    }
    Ok(tables)
}

#[derive(Serialize)]
struct DeviationCsvRow<'a> {
    source_a: &'a str,
    source_b: &'a str,
    state: &'a State,
    party: &'a Party,
    a_pct: f64,
    b_pct: f64,
    deviation: f64,
}

#[derive(Serialize)]
struct DeviationSummaryRow<'a> {
    source_a: &'a str,
    source_b: &'a str,
    state: String,
    precision: Precision,
    mean: f64,
    max: f64,
    max_state: String,
    max_party: String,
}

fn deviation_rows(reports: &[&DeviationReport]) -> Vec<u8> {
    let rows: Vec<DeviationCsvRow<'_>> = reports
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(move |row| DeviationCsvRow {
                source_a: &r.source_a,
                source_b: &r.source_b,
                state: &row.state,
                party: &row.party,
                a_pct: row.a_pct,
                b_pct: row.b_pct,
                deviation: row.deviation,
            })
        })
        .collect();
    if rows.is_empty() {
        return csv_header_only(&["source_a", "source_b", "state", "party", "a_pct", "b_pct", "deviation"]);
    }
    csv_bytes(&rows)
}

fn summary_rows(reports: &[&DeviationReport]) -> Vec<u8> {
    let rows: Vec<DeviationSummaryRow<'_>> = reports
        .iter()
        .map(|r| DeviationSummaryRow {
            source_a: &r.source_a,
            source_b: &r.source_b,
            state: r.state.as_ref().map_or_else(|| "pooled".to_string(), |s| s.to_string()),
            precision: r.precision,
            mean: r.mean,
            max: r.max,
            max_state: r.max_at.as_ref().map_or_else(String::new, |(s, _)| s.to_string()),
            max_party: r.max_at.as_ref().map_or_else(String::new, |(_, p)| p.to_string()),
        })
        .collect();
    if rows.is_empty() {
        return csv_header_only(&["source_a", "source_b", "state", "precision", "mean", "max", "max_state", "max_party"]);
    }
    csv_bytes(&rows)
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    created_at: String,
    last_command: &'a str,
    knobs: &'a crate::config::Knobs,
    families: Vec<&'static str>,
    mock_backend: bool,
    outputs: Vec<ManifestEntry>,
}

// ------------------------------------------------------------- pipeline

/// A configured run. Created once per process; every command writes under
/// [`Pipeline::run_dir`].
pub struct Pipeline {
    config: PipelineConfig,
    run_dir: PathBuf,
    backend: Option<Arc<dyn CompletionBackend>>,
    mock: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let run_dir = config.run_dir();
        Ok(Pipeline { config, run_dir, backend: None, mock: false })
    }

    /// Use `backend` for every family instead of the configured HTTP endpoint.
    pub fn with_backend(mut self, backend: Arc<dyn CompletionBackend>, is_mock: bool) -> Self {
        self.backend = Some(backend);
        self.mock = is_mock;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
        }
        fs::write(&path, bytes).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
    }

    fn universe(&self) -> PartyUniverse {
        self.config.party_universe()
    }

    fn alias_tables(&self) -> Result<AliasTables> {
        let universe = self.universe();
        let mut tables = match &self.config.aliases.path {
            Some(p) => AliasTables::load(&self.config.resolve(p), &universe),
            None => AliasTables::builtin(&universe),
        }
        .map_err(|e| PipelineError::Config(format!("aliases.path: {e}")))?;
        let target = self.config.coverage_target();
        tables.party.coverage_target = target;
        tables.state.coverage_target = target;
        Ok(tables)
    }

    fn template(&self, family: ChatFamily) -> Result<PromptTemplate> {
        match &self.config.prompts.manifest {
            Some(p) => {
                let all = load_manifest(&self.config.resolve(p)).map_err(|e| PipelineError::Config(format!("prompts.manifest: {e}")))?;
                template_for(&all, family).cloned().map_err(|e| PipelineError::Config(format!("prompts.manifest: {e}")))
            }
            None => Ok(PromptTemplate::builtin(family)),
        }
    }

    /// Rewrite `manifest.json` listing every output in the run directory.
    pub fn write_manifest(&self, command: &str) -> Result<()> {
        let mut files = Vec::new();
        collect_files(&self.run_dir, &self.run_dir, &mut files)
            .map_err(|source| PipelineError::Io { path: self.run_dir.display().to_string(), source })?;
        files.sort();
        let outputs = files
            .into_iter()
            .filter(|rel| rel != MANIFEST_FILE && !rel.ends_with(CHECKPOINT_SUFFIX))
            .map(|rel| {
                let bytes = fs::read(self.run_dir.join(&rel)).unwrap_or_default();
                ManifestEntry { sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, path: rel }
            })
            .collect();
        let manifest = Manifest {
            tool: "votecast",
            version: env!("CARGO_PKG_VERSION"),
            config_hash: self.config.hash(),
            created_at: chrono::Utc::now().to_rfc3339(),
            last_command: command,
            knobs: &self.config.knobs,
            families: self.config.families()?.iter().map(|f| f.short_name()).collect(),
            mock_backend: self.mock,
            outputs,
        };
        self.write(MANIFEST_FILE, &json_bytes(&manifest))
    }

    // ------------------------------------------------------------ ingest

    pub fn cmd_ingest(&self) -> Result<IngestStats> {
        let corpus = self
            .config
            .corpus
            .as_ref()
            .ok_or_else(|| PipelineError::Config("corpus: section missing; ingest needs corpus.paths".into()))?;
        let mut stats = IngestStats::default();
        let mut records = Vec::new();
        let mut skipped_rows = Vec::new();
        for p in &corpus.paths {
            let full = self.config.resolve(p);
            let format = self.config.corpus_format(&full)?;
            let report = load_corpus(&full, format).map_err(|e| PipelineError::Data(format!("corpus.paths: {e}")))?;
            let label = p.display().to_string();
            stats.files.push(FileStats { path: label.clone(), loaded: report.records.len(), skipped: report.skipped.len() });
            for s in &report.skipped {
                skipped_rows.push((label.clone(), s.line, s.reason.clone()));
            }
            records.extend(report.records.into_iter().map(|mut r| {
                r.source_file = label.clone();
                r
            }));
        }
        stats.loaded = records.len();
        stats.skipped = skipped_rows.len();
        let unique = dedupe(records);
        stats.duplicates = stats.loaded - unique.len();

        let (kept, matches): (Vec<TweetRecord>, Vec<(String, String, String)>) = if corpus.filter_by_queries {
            let q = corpus.queries.as_ref().expect("validated");
            let sets = load_query_sets(&self.config.resolve(q)).map_err(|e| PipelineError::Config(format!("corpus.queries: {e}")))?;
            for s in &sets {
                stats.per_query_set.entry(s.party_label.clone()).or_insert(0);
            }
            let before = unique.len();
            let filtered = filter_by_queries(unique, &sets);
            stats.unmatched = before - filtered.len();
            let mut matches = Vec::new();
            let mut kept = Vec::with_capacity(filtered.len());
            for f in filtered {
                let labels: BTreeSet<&str> = f.matched.iter().map(|m| m.party_label.as_str()).collect();
                for l in labels {
                    *stats.per_query_set.entry(l.to_string()).or_insert(0) += 1;
                }
                for m in &f.matched {
                    matches.push((f.record.id.clone(), m.party_label.clone(), m.term.clone()));
                }
                kept.push(f.record);
            }
            (kept, matches)
        } else {
            (unique, Vec::new())
        };
        stats.kept = kept.len();

        let mut jsonl = String::new();
        for r in &kept {
            jsonl.push_str(&serde_json::to_string(r).expect("record serializes"));
            jsonl.push('\n');
        }
        self.write("corpus/records.jsonl", jsonl.as_bytes())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tweet_id", "query_set", "term"]).expect("header");
        for (id, l, t) in &matches {
            w.write_record([id, l, t]).expect("row");
        }
        self.write("corpus/matches.csv", &w.into_inner().expect("buffer"))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["file", "line", "reason"]).expect("header");
        for (f, line, reason) in &skipped_rows {
            w.write_record([f.as_str(), &line.to_string(), reason.as_str()]).expect("row");
        }
        self.write("corpus/skipped.csv", &w.into_inner().expect("buffer"))?;
        self.write("corpus/stats.json", &json_bytes(&stats))?;

        let mut txt = String::new();
        let _ = writeln!(txt, "records loaded     {}", stats.loaded);
        let _ = writeln!(txt, "records skipped    {}", stats.skipped);
        let _ = writeln!(txt, "duplicates dropped {}", stats.duplicates);
        let _ = writeln!(txt, "no query match     {}", stats.unmatched);
        let _ = writeln!(txt, "records kept       {}", stats.kept);
        for (label, n) in &stats.per_query_set {
            let _ = writeln!(txt, "  {label:<16} {n}");
        }
        self.write("corpus/summary.txt", txt.as_bytes())?;
        tracing::info!(kept = stats.kept, duplicates = stats.duplicates, skipped = stats.skipped, "ingest done");
        Ok(stats)
    }

    fn records(&self) -> Result<Vec<TweetRecord>> {
        let path = self.path("corpus/records.jsonl");
        if !path.is_file() {
            return Err(missing_stage(&path, "ingest"));
        }
        read_jsonl(&path)
    }

    // ---------------------------------------------------------- annotate

    pub fn cmd_annotate(&self, family: ChatFamily) -> Result<AnnotateStats> {
        let records = self.records()?;
        let template = self.template(family)?;
        let backend_cfg = self.config.backend_for(family).with_env_overrides();
        let http;
        let backend: &dyn CompletionBackend = match &self.backend {
            Some(b) => b.as_ref(),
            None => {
                http = HttpBackend::new(&backend_cfg);
                &http
            }
        };
        let name = family.short_name();
        let ckpt = self.path(&format!("annotations/{name}{CHECKPOINT_SUFFIX}"));
        let out = annotate_corpus(&records, &template, &backend_cfg, backend, Some(&ckpt)).map_err(|e| match e {
            crate::gateway::GatewayError::Config(m) => PipelineError::Config(format!("backend: {m}")),
            other => PipelineError::Io { path: ckpt.display().to_string(), source: io::Error::other(other.to_string()) },
        })?;
        let mut jsonl = String::new();
        for a in &out.annotations {
            jsonl.push_str(&serde_json::to_string(&AnnotationRow::from(a)).expect("row serializes"));
            jsonl.push('\n');
        }
        self.write(&format!("annotations/{name}.jsonl"), jsonl.as_bytes())?;
        let s = &out.stats;
        tracing::info!(family = name, sent = s.sent, resumed = s.from_checkpoint, ok = s.ok, failed = s.failed, "annotate done");
        if s.sent > 0 && s.ok == 0 {
            let why = if s.unreachable > 0 { "endpoint unreachable" } else { "every request failed" };
            return Err(PipelineError::Backend(format!(
                "{name}: {why} ({} of {} requests failed) at {}",
                s.failed, s.sent, backend_cfg.endpoint_url
            )));
        }
        Ok(out.stats)
    }

    // ----------------------------------------------------------- extract

    pub fn cmd_extract(&self, family: ChatFamily) -> Result<ExtractSummary> {
        let name = family.short_name();
        let path = self.path(&format!("annotations/{name}.jsonl"));
        if !path.is_file() {
            return Err(missing_stage(&path, &format!("annotate --family {name}")));
        }
        let rows: Vec<AnnotationRow> = read_jsonl(&path)?;
        let tables = self.alias_tables()?;
        let universe = self.universe();

        let mut results: Vec<ExtractionResult> = Vec::new();
        let mut failed_annotations = 0;
        for r in &rows {
            if r.status == AnnotationStatus::Failed {
                failed_annotations += 1;
                continue;
            }
            results.push(extract_for(&r.tweet_id, &r.raw_output));
        }

        let mut mention_rows = Vec::new();
        let mut canonical = Vec::new();
        let mut unresolved = Vec::new();
        let mut party_raws = Vec::new();
        let mut state_raws = Vec::new();
        for res in &results {
            for m in &res.mentions {
                mention_rows.push(MentionRow {
                    tweet_id: &res.tweet_id,
                    stage: res.stage,
                    party_raw: &m.party_raw,
                    state_raw: &m.state_raw,
                    sentiment: m.sentiment,
                });
                party_raws.push(m.party_raw.as_str());
                state_raws.push(m.state_raw.as_str());
                match canonicalize(m, &res.tweet_id, &tables, &universe) {
                    Ok(c) => canonical.push(c),
                    Err(u) => unresolved.push(u),
                }
            }
        }
        let dir = format!("extract/{name}");
        let hist = stage_histogram(&results);
        let stages: BTreeMap<String, usize> = hist.iter().map(|(s, n)| (s.as_str().to_string(), *n)).collect();
        let hist_rows: Vec<(&str, usize)> = hist.iter().map(|(s, n)| (s.as_str(), *n)).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "count"]).expect("header");
        for (s, n) in &hist_rows {
            w.write_record([*s, &n.to_string()]).expect("row");
        }
        self.write(&format!("{dir}/stages.csv"), &w.into_inner().expect("buffer"))?;
        self.write(
            &format!("{dir}/mentions.csv"),
            &if mention_rows.is_empty() {
                csv_header_only(&["tweet_id", "stage", "party_raw", "state_raw", "sentiment"])
            } else {
                csv_bytes(&mention_rows)
            },
        )?;
        self.write(
            &format!("{dir}/canonical.csv"),
            &if canonical.is_empty() { csv_header_only(&["tweet_id", "party", "state", "sentiment"]) } else { csv_bytes(&canonical) },
        )?;
        self.write(
            &format!("{dir}/unresolved.csv"),
            &if unresolved.is_empty() {
                csv_header_only(&["tweet_id", "party_raw", "state_raw", "party_resolved", "state_resolved"])
            } else {
                csv_bytes(&unresolved)
            },
        )?;
        let target = self.config.coverage_target();
        let freq_party = frequency_report(&party_raws, target);
        let freq_state = frequency_report(&state_raws, target);
        let freq_header = ["value", "count", "fraction", "cumulative", "within_target"];
        for (file, rows) in [("frequency_party.csv", &freq_party), ("frequency_state.csv", &freq_state)] {
            let bytes = if rows.is_empty() { csv_header_only(&freq_header) } else { csv_bytes(rows) };
            self.write(&format!("{dir}/{file}"), &bytes)?;
        }
        let party_coverage = coverage(&tables.party, &party_raws);
        let state_coverage = coverage(&tables.state, &state_raws);
        let summary = ExtractSummary {
            family: name.to_string(),
            annotations: rows.len(),
            failed_annotations,
            stages,
            mentions: mention_rows.len(),
            canonical: canonical.len(),
            unresolved: unresolved.len(),
            party_coverage,
            state_coverage,
        };
        self.write(&format!("{dir}/summary.json"), &json_bytes(&summary))?;
        let mut txt = String::new();
        let _ = writeln!(txt, "family {name}: {} annotations, {} failed before extraction", summary.annotations, failed_annotations);
        for (s, n) in &hist_rows {
            let _ = writeln!(txt, "  stage {s:<15} {n}");
        }
        let _ = writeln!(txt, "mentions {} (canonical {}, unresolved {})", summary.mentions, summary.canonical, summary.unresolved);
        for c in [&summary.party_coverage, &summary.state_coverage] {
            let flag = if c.below_target { "  BELOW TARGET" } else { "" };
            let _ = writeln!(
                txt,
                "{:?} alias coverage {:.4} ({}/{}), target {}{flag}",
                c.kind, c.fraction, c.resolved, c.total, c.target
            );
        }
        self.write(&format!("{dir}/summary.txt"), txt.as_bytes())?;
        Ok(summary)
    }

    // --------------------------------------------------------- aggregate

    pub fn cmd_aggregate(&self, family: ChatFamily) -> Result<AggregateSummary> {
        let name = family.short_name();
        let path = self.path(&format!("extract/{name}/canonical.csv"));
        if !path.is_file() {
            return Err(missing_stage(&path, &format!("extract --family {name}")));
        }
        let mentions: Vec<CanonicalMention> = read_csv(&path)?;
        let aggs = aggregate(&mentions, self.config.knobs.aggregate_options());
        let opts = self.config.knobs.share_options();
        let universe = self.universe();

        let mut tables = Vec::new();
        let mut ensembles = Vec::new();
        let mut method_notes = Vec::new();
        let mut unpredictable = Vec::new();
        for state in universe.states() {
            let results = all_methods(&aggs, state, universe.parties(state), opts);
            for (m, r) in Method::ALL.iter().zip(&results) {
                match r {
                    Ok(ms) => {
                        tables.push(ms.to_table());
                        method_notes.push((state.clone(), m.as_str(), "ok".to_string(), ms.normalized));
                    }
                    Err(e) => {
                        if self.config.knobs.invalid_method == InvalidMethodPolicy::Fail {
                            return Err(PipelineError::Data(format!("{name}: {e} (knobs.invalid_method = \"fail\")")));
                        }
                        tracing::warn!(family = name, error = %e, "method excluded");
                        method_notes.push((state.clone(), m.as_str(), e.to_string(), false));
                    }
                }
            }
            match ensemble_of(state, &results) {
                Ok(e) => {
                    tables.push(e.to_table());
                    ensembles.push(e);
                }
                Err(ShareError::Unpredictable { state }) => {
                    tracing::warn!(family = name, %state, "state unpredictable: no valid method");
                    unpredictable.push(state);
                }
                Err(e) => return Err(data(e)),
            }
        }

        let dir = format!("aggregate/{name}");
        let agg_rows: Vec<_> = aggs.values().collect();
        self.write(
            &format!("{dir}/aggregates.csv"),
            &if agg_rows.is_empty() { csv_header_only(&["state", "party", "pm", "nm", "pv", "nv", "tv"]) } else { csv_bytes(&agg_rows) },
        )?;
        let rows = share_rows(&tables);
        self.write(
            &format!("{dir}/shares.csv"),
            &if rows.is_empty() {
                csv_header_only(&["source", "state", "party", "share", "percent", "percent_whole"])
            } else {
                csv_bytes(&rows)
            },
        )?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["state", "method", "status", "normalized"]).expect("header");
        for (s, m, status, norm) in &method_notes {
            w.write_record([s.as_str(), m, status, &norm.to_string()]).expect("row");
        }
        self.write(&format!("{dir}/methods.csv"), &w.into_inner().expect("buffer"))?;
        self.write(&format!("{dir}/ensemble.json"), &json_bytes(&ensembles))?;

        let mut txt = String::new();
        for t in &tables {
            let cells: Vec<String> = t.shares.iter().map(|(p, v)| format!("{p} {:.0}", whole_percent(*v))).collect();
            let _ = writeln!(txt, "{:<10} {:<14} {}", t.source, t.state, cells.join("  "));
        }
        for s in &unpredictable {
            let _ = writeln!(txt, "{s}: unpredictable (no valid method)");
        }
        self.write(&format!("{dir}/summary.txt"), txt.as_bytes())?;
        Ok(AggregateSummary { family: name.to_string(), tables, unpredictable })
    }

    // ------------------------------------------------------------- polls

    pub fn cmd_polls(&self) -> Result<PollSummary> {
        let p = self
            .config
            .polls
            .path
            .as_ref()
            .ok_or_else(|| PipelineError::Config("polls.path: not set; the polls command needs a poll file".into()))?;
        let load = load_polls(&self.config.resolve(p)).map_err(|e| PipelineError::Data(format!("polls.path: {e}")))?;
        let (shares, errors) = all_pollster_shares(&load.records);
        let combiner = self.config.polls.combiner;

        #[derive(Serialize)]
        struct PollsterRow<'a> {
            pollster: &'a str,
            poll_type: &'static str,
            state: &'a State,
            party: &'a Party,
            percent: f64,
        }
        let rows: Vec<PollsterRow<'_>> = shares
            .iter()
            .flat_map(|s| {
                s.shares.iter().map(move |(p, v)| PollsterRow {
                    pollster: &s.pollster,
                    poll_type: s.poll_type.source_label(),
                    state: &s.state,
                    party: p,
                    percent: *v,
                })
            })
            .collect();
        self.write(
            "polls/pollsters.csv",
            &if rows.is_empty() { csv_header_only(&["pollster", "poll_type", "state", "party", "percent"]) } else { csv_bytes(&rows) },
        )?;

        let mut keys: BTreeSet<(State, PollType)> = BTreeSet::new();
        for s in &shares {
            keys.insert((s.state.clone(), s.poll_type));
        }
        let consensus: Vec<ShareTable> = keys.iter().map(|(st, ty)| consensus_table(&shares, st, *ty, combiner)).collect();
        let crow = share_rows(&consensus);
        self.write(
            "polls/consensus.csv",
            &if crow.is_empty() {
                csv_header_only(&["source", "state", "party", "share", "percent", "percent_whole"])
            } else {
                csv_bytes(&crow)
            },
        )?;
        let disp: Vec<_> = keys.iter().flat_map(|(st, ty)| dispersion(&shares, st, *ty)).collect();
        self.write(
            "polls/dispersion.csv",
            &if disp.is_empty() {
                csv_header_only(&["state", "poll_type", "party", "min", "min_pollster", "max", "max_pollster", "spread"])
            } else {
                csv_bytes(&disp)
            },
        )?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "reason"]).expect("header");
        for (row, reason) in &load.rejected {
            w.write_record([row.to_string(), reason.clone()]).expect("row");
        }
        for e in &errors {
            w.write_record([String::new(), e.to_string()]).expect("row");
        }
        self.write("polls/rejected.csv", &w.into_inner().expect("buffer"))?;

        let mut txt = String::new();
        for t in &consensus {
            let cells: Vec<String> = t.shares.iter().map(|(p, v)| format!("{p} {:.0}", whole_percent(*v))).collect();
            let _ = writeln!(txt, "{:<8} {:<14} {}", t.source, t.state, cells.join("  "));
        }
        self.write("polls/summary.txt", txt.as_bytes())?;
        Ok(PollSummary {
            pollster_tables: shares.len(),
            excluded: errors.iter().map(ToString::to_string).collect(),
            rejected_rows: load.rejected.len(),
            consensus,
        })
    }

    // ----------------------------------------------------------- compare

    /// Every forecast source available to `compare`, plus the actual results.
    fn gather_sources(&self) -> Result<(Vec<(String, Vec<ShareTable>)>, Vec<ShareTable>)> {
        let mut sources: Vec<(String, Vec<ShareTable>)> = Vec::new();
        let mut push = |t: ShareTable| match sources.iter_mut().find(|(s, _)| *s == t.source) {
            Some((_, v)) => v.push(t),
            None => sources.push((t.source.clone(), vec![t])),
        };
        let mut actual: Vec<ShareTable> = Vec::new();
        if let Some(p) = &self.config.results.reference {
            let tables = load_percent_tables(&self.config.resolve(p), "REFERENCE")
                .map_err(|e| PipelineError::Data(format!("results.reference: {e}")))?;
            for t in tables {
                if t.source == ACTUAL_SOURCE {
                    actual.push(t);
                } else {
                    push(t);
                }
            }
        }
        if let Some(p) = &self.config.results.actual {
            let tables = load_percent_tables(&self.config.resolve(p), ACTUAL_SOURCE)
                .map_err(|e| PipelineError::Data(format!("results.actual: {e}")))?;
            actual = tables.into_iter().filter(|t| t.source == ACTUAL_SOURCE).collect();
        }
        let consensus = self.path("polls/consensus.csv");
        if consensus.is_file() {
            for t in read_share_tables(&consensus, "polls/")? {
                push(t);
            }
        }
        for fam in self.config.families()? {
            let shares = self.path(&format!("aggregate/{}/shares.csv", fam.short_name()));
            if shares.is_file() {
                for t in read_share_tables(&shares, &format!("{}/", fam.short_name()))? {
                    push(t);
                }
            }
        }
        Ok((sources, actual))
    }

    fn precision_for<'a>(&self, tables: impl IntoIterator<Item = &'a ShareTable>) -> Precision {
        self.config.knobs.precision.fixed().unwrap_or_else(|| Precision::detect(tables))
    }

    fn default_pairs(&self, sources: &[(String, Vec<ShareTable>)]) -> Vec<(String, String)> {
        if !self.config.compare.pairs.is_empty() {
            return self.config.compare.pairs.clone();
        }
        let has = |s: &str| sources.iter().any(|(n, _)| n == s);
        let mut pairs = Vec::new();
        if has("LLAMA2") && has("ZEPHYR") {
            pairs.push(("LLAMA2".to_string(), "ZEPHYR".to_string()));
        }
        let a = format!("llama2/{ENSEMBLE_SOURCE}");
        let b = format!("zephyr/{ENSEMBLE_SOURCE}");
        if has(&a) && has(&b) {
            pairs.push((a, b));
        }
        pairs
    }

    pub fn cmd_compare(&self) -> Result<CompareSummary> {
        let (sources, actual) = self.gather_sources()?;
        if actual.is_empty() {
            return Err(PipelineError::Config(
                "results.actual: no actual results available (set results.actual or include ACTUAL rows in results.reference)".into(),
            ));
        }
        let eval_err = |e: EvalError| match e {
            EvalError::DisjointParties { .. } | EvalError::StateMismatch { .. } => PipelineError::Config(e.to_string()),
            other => data(other),
        };

        let mut against_actual = Vec::new();
        let mut by_precision: BTreeMap<&'static str, Vec<DeviationReport>> = BTreeMap::new();
        for (name, tables) in &sources {
            let paired: Vec<(&ShareTable, &ShareTable)> =
                tables.iter().filter_map(|t| actual.iter().find(|a| a.state == t.state).map(|a| (t, a))).collect();
            if paired.is_empty() {
                continue;
            }
            let chosen = self.precision_for(paired.iter().flat_map(|(t, a)| [*t, *a]));
            let mut reports = Vec::new();
            for (t, a) in &paired {
                for (label, prec) in [("whole", Precision::WholePercent), ("full", Precision::Full)] {
                    by_precision.entry(label).or_default().push(abs_error(t, a, prec).map_err(eval_err)?);
                }
                reports.push(abs_error(t, a, chosen).map_err(eval_err)?);
            }
            against_actual.push(SourceDeviation { source: name.clone(), precision: chosen, reports });
        }

        let mut pairwise = Vec::new();
        let mut pairwise_variants: BTreeMap<&'static str, Vec<DeviationReport>> = BTreeMap::new();
        for (a, b) in self.default_pairs(&sources) {
            let find = |n: &str| {
                sources
                    .iter()
                    .find(|(s, _)| s == n)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| PipelineError::Config(format!("compare.pairs: unknown source `{n}`")))
            };
            let (ta, tb) = (find(&a)?, find(&b)?);
            let chosen = self.precision_for(ta.iter().chain(&tb));
            pairwise.push(pairwise_model_deviation(&ta, &tb, chosen).map_err(eval_err)?);
            for (label, prec) in [("whole", Precision::WholePercent), ("full", Precision::Full)] {
                pairwise_variants.entry(label).or_default().push(pairwise_model_deviation(&ta, &tb, prec).map_err(eval_err)?);
            }
        }

        let mut winners = Vec::new();
        for (name, tables) in sources.iter().map(|(n, t)| (n.as_str(), t)).chain([(ACTUAL_SOURCE, &actual)]) {
            for t in tables {
                let Some(w) = winner(t) else { continue };
                let truth = actual.iter().find(|a| a.state == t.state).and_then(winner);
                let matches_actual = (name != ACTUAL_SOURCE).then(|| truth.map(|tw| tw.parties == w.parties)).flatten();
                winners.push(WinnerCall {
                    source: name.to_string(),
                    state: t.state.clone(),
                    tie: w.is_tie(),
                    share_pct: pct(w.share),
                    winners: w.parties,
                    matches_actual,
                });
            }
        }

        for label in ["whole", "full"] {
            let reports: Vec<&DeviationReport> = by_precision.get(label).map(|v| v.iter().collect()).unwrap_or_default();
            self.write(&format!("compare/deviation_{label}.csv"), &deviation_rows(&reports))?;
            self.write(&format!("compare/deviation_summary_{label}.csv"), &summary_rows(&reports))?;
            let pw: Vec<&DeviationReport> = pairwise_variants.get(label).map(|v| v.iter().collect()).unwrap_or_default();
            self.write(&format!("compare/pairwise_{label}.csv"), &deviation_rows(&pw))?;
            self.write(&format!("compare/pairwise_summary_{label}.csv"), &summary_rows(&pw))?;
        }

        #[derive(Serialize)]
        struct PlotRow<'a> {
            state: &'a State,
            party: &'a Party,
            source: &'a str,
            deviation: f64,
        }
        let plot: Vec<PlotRow<'_>> = against_actual
            .iter()
            .flat_map(|sd| {
                sd.reports.iter().flat_map(move |r| {
                    r.rows.iter().map(move |row| PlotRow {
                        state: &row.state,
                        party: &row.party,
                        source: &sd.source,
                        deviation: row.deviation,
                    })
                })
            })
            .collect();
        self.write(
            "compare/plot_data.csv",
            &if plot.is_empty() { csv_header_only(&["state", "party", "source", "deviation"]) } else { csv_bytes(&plot) },
        )?;

        #[derive(Serialize)]
        struct WinnerRow<'a> {
            source: &'a str,
            state: &'a State,
            winner: String,
            share_pct: f64,
            tie: bool,
            matches_actual: String,
        }
        let wrows: Vec<WinnerRow<'_>> = winners
            .iter()
            .map(|w| WinnerRow {
                source: &w.source,
                state: &w.state,
                winner: w.winners.iter().map(Party::as_str).collect::<Vec<_>>().join("|"),
                share_pct: w.share_pct,
                tie: w.tie,
                matches_actual: w.matches_actual.map_or_else(String::new, |b| b.to_string()),
            })
            .collect();
        self.write("compare/winners.csv", &csv_bytes(&wrows))?;

        let summary = CompareSummary { against_actual, pairwise, winners };
        self.write("compare/summary.json", &json_bytes(&summary))?;
        self.write("compare/summary.txt", render_compare_text(&summary).as_bytes())?;
        Ok(summary)
    }

    // ----------------------------------------------------------- run all

    pub fn cmd_run_all(&self) -> Result<RunSummary> {
        let mut summary = RunSummary {
            run_dir: self.run_dir.clone(),
            ingest: None,
            annotate: BTreeMap::new(),
            extract: Vec::new(),
            aggregate: Vec::new(),
            polls: None,
            compare: None,
        };
        if self.config.corpus.is_some() {
            summary.ingest = Some(self.cmd_ingest()?);
            for fam in self.config.families()? {
                summary.annotate.insert(fam.short_name().to_string(), self.cmd_annotate(fam)?);
                summary.extract.push(self.cmd_extract(fam)?);
                summary.aggregate.push(self.cmd_aggregate(fam)?);
            }
        }
        if self.config.polls.path.is_some() {
            summary.polls = Some(self.cmd_polls()?);
        }
        if self.config.results.actual.is_some() || self.config.results.reference.is_some() {
            summary.compare = Some(self.cmd_compare()?);
        }
        Ok(summary)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn fmt_pp(v: f64, precision: Precision) -> String {
    match precision {
        Precision::WholePercent => format!("{v:.0}"),
        Precision::Full => format!("{v:.2}"),
    }
}

fn render_compare_text(s: &CompareSummary) -> String {
    let mut txt = String::new();
    let _ = writeln!(txt, "Deviation from actual results (percentage points)");
    for sd in &s.against_actual {
        for r in &sd.reports {
            let state = r.state.as_ref().map_or("pooled".to_string(), ToString::to_string);
            let cells: Vec<String> = r.rows.iter().map(|row| format!("{} {}", row.party, fmt_pp(row.deviation, r.precision))).collect();
            let _ = writeln!(
                txt,
                "  {:<20} {:<14} mean {:.2}  max {}  [{}]  ({})",
                sd.source,
                state,
                r.mean,
                fmt_pp(r.max, r.precision),
                cells.join(", "),
                r.precision
            );
        }
    }
    if !s.pairwise.is_empty() {
        let _ = writeln!(txt, "\nPairwise deviation");
        for r in &s.pairwise {
            let at = r.max_at.as_ref().map_or(String::new(), |(st, p)| format!(" at {st} {p}"));
            let _ = writeln!(
                txt,
                "  {} vs {}: mean {:.2}, max {}{at} over {} rows ({})",
                r.source_a,
                r.source_b,
                r.mean,
                fmt_pp(r.max, r.precision),
                r.rows.len(),
                r.precision
            );
        }
    }
    let _ = writeln!(txt, "\nWinners");
    for w in &s.winners {
        let names: Vec<&str> = w.winners.iter().map(Party::as_str).collect();
        let tie = if w.tie { " (tie)" } else { "" };
        let check = match w.matches_actual {
            Some(true) => "  correct",
            Some(false) => "  wrong",
            None => "",
        };
        let _ = writeln!(txt, "  {:<20} {:<14} {}{tie} {:.1}%{check}", w.source, w.state, names.join("/"), w.share_pct);
    }
    txt
}
