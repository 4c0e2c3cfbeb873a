//! Tweet corpus loading, deduplication and query filtering.
//!
//! Tweet text is kept byte-exact as ingested. The only cleanup applied to the
//! corpus is the removal of records that repeat the full
//! `(id, created_at, username, text)` tuple.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot read csv corpus {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("unknown corpus format `{0}` (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("invalid query set file {path}: {reason}")]
    QuerySet { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }

    /// Guess from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            "csv" => Some(CorpusFormat::Csv),
            _ => None,
        }
    }
}

/// One post.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub username: String,
    #[serde(rename = "tweet")]
    pub text: String,
    pub source_file: String,
}

impl TweetRecord {
    fn dedup_key(&self) -> (&str, DateTime<Utc>, &str, &str) {
        (&self.id, self.created_at, &self.username, &self.text)
    }
}

/// A record that failed schema checks during loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRecord {
    /// 1-based line (jsonl) or data row (csv) number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<TweetRecord>,
    pub skipped: Vec<SkippedRecord>,
}

impl LoadReport {
    pub fn count(&self) -> usize {
        self.records.len()
    }
}

/// Parse the timestamp shapes seen in tweet dumps and normalize to UTC.
///
/// Offset-less timestamps are taken to already be UTC.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f %z", "%Y-%m-%d %H:%M:%S %z", "%a %b %d %H:%M:%S %z %Y"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

fn value_as_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn build_record(
    id: Option<String>,
    created_at: Option<String>,
    username: Option<String>,
    text: Option<String>,
    source_file: &str,
) -> Result<TweetRecord, String> {
    let id = id.filter(|s| !s.is_empty()).ok_or("missing id")?;
    let created_raw = created_at.ok_or("missing created_at")?;
    let created_at = parse_timestamp(&created_raw).ok_or_else(|| format!("unparseable created_at `{created_raw}`"))?;
    let username = username.ok_or("missing username")?;
    let text = text.ok_or("missing tweet")?;
    Ok(TweetRecord { id, created_at, username, text, source_file: source_file.to_string() })
}

/// Load a corpus file, skipping (and counting) records that violate the schema.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadReport, CorpusError> {
    let source_file = path.display().to_string();
    let mut report = LoadReport::default();
    match format {
        CorpusFormat::Jsonl => {
            let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: source_file.clone(), source })?;
            for (idx, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<serde_json::Value>(line)
                    .map_err(|e| format!("invalid json: {e}"))
                    .and_then(|v| {
                        let obj = v.as_object().ok_or("not a json object")?;
                        let field = |k: &str| obj.get(k).and_then(value_as_text);
                        build_record(field("id"), field("created_at"), field("username"), field("tweet"), &source_file)
                    });
                push_or_skip(&mut report, idx + 1, parsed);
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(true)
                .from_path(path)
                .map_err(|source| CorpusError::Csv { path: source_file.clone(), source })?;
            let headers = reader.headers().map_err(|source| CorpusError::Csv { path: source_file.clone(), source })?.clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (ci, cc, cu, ct) = (col("id"), col("created_at"), col("username"), col("tweet"));
            for (idx, row) in reader.records().enumerate() {
                let parsed = row.map_err(|e| format!("invalid csv row: {e}")).and_then(|row| {
                    let get = |c: Option<usize>| c.and_then(|i| row.get(i)).map(str::to_string);
                    build_record(get(ci), get(cc), get(cu), get(ct), &source_file)
                });
                push_or_skip(&mut report, idx + 1, parsed);
            }
        }
    }
    tracing::info!(path = %source_file, loaded = report.records.len(), skipped = report.skipped.len(), "corpus loaded");
    Ok(report)
}

fn push_or_skip(report: &mut LoadReport, line: usize, parsed: Result<TweetRecord, String>) {
    match parsed {
        Ok(r) => report.records.push(r),
        Err(reason) => {
            tracing::warn!(line, %reason, "skipping corpus record");
            report.skipped.push(SkippedRecord { line, reason });
        }
    }
}

/// Keep the first occurrence of each `(id, created_at, username, text)` tuple.
pub fn dedupe(records: Vec<TweetRecord>) -> Vec<TweetRecord> {
    let mut seen = HashSet::with_capacity(records.len());
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let key = {
            let (a, b, c, d) = r.dedup_key();
            (a.to_string(), b, c.to_string(), d.to_string())
        };
        if seen.insert(key) {
            out.push(r);
        }
    }
    out
}

/// Search terms that selected posts for one party, or for the general election.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    #[serde(rename = "party")]
    pub party_label: String,
    pub terms: Vec<String>,
}

impl QuerySet {
    pub fn validate(&self) -> Result<(), String> {
        if self.terms.is_empty() {
            return Err(format!("query set `{}` has no terms", self.party_label));
        }
        let mut seen = HashSet::new();
        for t in &self.terms {
            if t.trim().is_empty() {
                return Err(format!("query set `{}` has an empty term", self.party_label));
            }
            if !seen.insert(t.to_lowercase()) {
                return Err(format!("query set `{}` repeats term `{t}`", self.party_label));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct QueryFile {
    #[serde(rename = "query_set")]
    sets: Vec<QuerySet>,
}

/// Load query sets from a TOML file of `[[query_set]]` tables or a JSON array.
pub fn load_query_sets(path: &Path) -> Result<Vec<QuerySet>, CorpusError> {
    let p = path.display().to_string();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: p.clone(), source })?;
    let sets: Vec<QuerySet> = if raw.trim_start().starts_with('[') && !raw.trim_start().starts_with("[[") {
        serde_json::from_str(&raw).map_err(|e| CorpusError::QuerySet { path: p.clone(), reason: e.to_string() })?
    } else {
        toml::from_str::<QueryFile>(&raw).map_err(|e| CorpusError::QuerySet { path: p.clone(), reason: e.to_string() })?.sets
    };
    for s in &sets {
        s.validate().map_err(|reason| CorpusError::QuerySet { path: p.clone(), reason })?;
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchedTerm {
    pub party_label: String,
    pub term: String,
}

#[derive(Debug, Clone)]
pub struct FilteredRecord {
    pub record: TweetRecord,
    pub matched: Vec<MatchedTerm>,
}

impl FilteredRecord {
    pub fn terms(&self) -> Vec<&str> {
        self.matched.iter().map(|m| m.term.as_str()).collect()
    }
}

enum TermMatcher {
    /// `@handle` / `#hashtag`: case-insensitive literal substring.
    Literal(String),
    /// Bare keyword or phrase: case-insensitive, on word boundaries.
    Word(Regex),
}

impl TermMatcher {
    fn new(term: &str) -> Self {
        if term.starts_with('@') || term.starts_with('#') {
            TermMatcher::Literal(term.to_lowercase())
        } else {
            let pattern = format!(r"\b{}\b", regex::escape(term));
            let re = RegexBuilder::new(&pattern).case_insensitive(true).build().expect("escaped term is a valid regex");
            TermMatcher::Word(re)
        }
    }

    fn is_match(&self, text: &str, lowered: &str) -> bool {
        match self {
            TermMatcher::Literal(t) => lowered.contains(t.as_str()),
            TermMatcher::Word(re) => re.is_match(text),
        }
    }
}

/// Compiled form of a list of query sets.
pub struct QueryFilter {
    matchers: Vec<(MatchedTerm, TermMatcher)>,
}

impl QueryFilter {
    pub fn new(query_sets: &[QuerySet]) -> Self {
        let matchers = query_sets
            .iter()
            .flat_map(|qs| {
                qs.terms.iter().map(move |t| {
                    (MatchedTerm { party_label: qs.party_label.clone(), term: t.clone() }, TermMatcher::new(t))
                })
            })
            .collect();
        QueryFilter { matchers }
    }

    pub fn matches(&self, text: &str) -> Vec<MatchedTerm> {
        let lowered = text.to_lowercase();
        self.matchers.iter().filter(|(_, m)| m.is_match(text, &lowered)).map(|(t, _)| t.clone()).collect()
    }
}

/// Keep records whose text contains at least one query term, in input order.
pub fn filter_by_queries(records: Vec<TweetRecord>, query_sets: &[QuerySet]) -> Vec<FilteredRecord> {
    let filter = QueryFilter::new(query_sets);
    records
        .into_iter()
        .filter_map(|record| {
            let matched = filter.matches(&record.text);
            (!matched.is_empty()).then_some(FilteredRecord { record, matched })
        })
        .collect()
}
