//! Prompt dispatch to a completion backend.
//!
//! [`annotate_corpus`] runs at most `max_in_flight` requests at a time on a
//! scoped worker pool, retries transient failures with exponential backoff,
//! appends every finished annotation to a JSONL checkpoint, and returns
//! annotations in input order. Records already present in the checkpoint are
//! not sent again.

mod http;
pub mod mock;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TweetRecord;
use crate::prompt_kit::{render, ChatFamily, PromptTemplate};

pub use http::HttpBackend;

pub const ENV_ENDPOINT_URL: &str = "VOTECAST_ENDPOINT_URL";
pub const ENV_API_KEY: &str = "VOTECAST_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    /// Send again prompts whose checkpointed annotation failed. Off by
    /// default so a rerun over a complete checkpoint makes no requests.
    pub resend_failed: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_backoff_ms: 500, resend_failed: false }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from the base.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_timeout_ms: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/completions".into(),
            model_name: String::new(),
            temperature: 0.0,
            max_tokens: 256,
            request_timeout_ms: 60_000,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            api_key: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config("temperature must be non-negative".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Apply `VOTECAST_ENDPOINT_URL` / `VOTECAST_API_KEY` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_ENDPOINT_URL) {
            if !url.is_empty() {
                self.endpoint_url = url;
            }
        }
        if let Ok(key) = std::env::var(ENV_API_KEY) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub tweet_id: &'a str,
    pub tweet_text: &'a str,
    pub family: ChatFamily,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Timeouts, 429 and 5xx responses; retried.
    Transient,
    /// Connection refused or DNS failure; retried, and reported as an
    /// unreachable backend when every request ends this way.
    Unreachable,
    /// Not retried.
    Permanent,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?}: {message}")]
pub struct BackendError {
    pub kind: ErrorKind,
    pub message: String,
}

impl BackendError {
    pub fn transient(m: impl Into<String>) -> Self {
        BackendError { kind: ErrorKind::Transient, message: m.into() }
    }

    pub fn unreachable(m: impl Into<String>) -> Self {
        BackendError { kind: ErrorKind::Unreachable, message: m.into() }
    }

    pub fn permanent(m: impl Into<String>) -> Self {
        BackendError { kind: ErrorKind::Permanent, message: m.into() }
    }

    fn retryable(&self) -> bool {
        self.kind != ErrorKind::Permanent
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>, config: &BackendConfig) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest<'_>, config: &BackendConfig) -> Result<String, BackendError> {
        (**self).complete(request, config)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest<'_>, config: &BackendConfig) -> Result<String, BackendError> {
        (**self).complete(request, config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionFailure {
    pub error: BackendError,
    pub attempts: u32,
    pub latency: Duration,
}

/// One prompt with retries. Empty completions count as transient failures.
pub fn complete<B: CompletionBackend + ?Sized>(
    backend: &B,
    config: &BackendConfig,
    request: &CompletionRequest<'_>,
) -> Result<Completion, CompletionFailure> {
    let started = Instant::now();
    let max = config.retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let outcome = backend
            .complete(request, config)
            .and_then(|t| if t.is_empty() { Err(BackendError::transient("empty completion")) } else { Ok(t) });
        match outcome {
            Ok(text) => return Ok(Completion { text, attempts: attempt, latency: started.elapsed() }),
            Err(error) if error.retryable() && attempt < max => {
                tracing::debug!(tweet_id = request.tweet_id, attempt, %error, "retrying completion");
                thread::sleep(config.retry.backoff(attempt));
            }
            Err(error) => return Err(CompletionFailure { error, attempts: attempt, latency: started.elapsed() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub tweet_id: String,
    pub prompt_family: String,
    /// Digest of the rendered prompt; together with `tweet_id` it keys the checkpoint.
    pub prompt_sha256: String,
    pub raw_output: String,
    pub attempts: u32,
    pub latency_ms: u64,
    pub status: AnnotationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ErrorKind>,
}

impl RawAnnotation {
    fn key(&self) -> (String, String) {
        (self.tweet_id.clone(), self.prompt_sha256.clone())
    }
}

fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Read a checkpoint, skipping unparseable lines (e.g. a line cut short by a crash).
pub fn load_checkpoint(path: &Path) -> Result<Vec<RawAnnotation>, GatewayError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(GatewayError::Checkpoint { path: path.display().to_string(), source }),
    };
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GatewayError::Checkpoint { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawAnnotation>(&line) {
            Ok(a) => out.push(a),
            Err(e) => tracing::warn!(line = idx + 1, error = %e, "ignoring unreadable checkpoint line"),
        }
    }
    Ok(out)
}

struct CheckpointWriter {
    file: Option<File>,
    path: String,
}

impl CheckpointWriter {
    fn open(path: Option<&Path>) -> Result<Self, GatewayError> {
        let Some(path) = path else { return Ok(CheckpointWriter { file: None, path: String::new() }) };
        let p = path.display().to_string();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| GatewayError::Checkpoint { path: p.clone(), source })?;
        }
        // A crash can leave a partial last line; start appends on a fresh line.
        let needs_newline = fs::read(path).map(|b| !b.is_empty() && !b.ends_with(b"\n")).unwrap_or(false);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| GatewayError::Checkpoint { path: p.clone(), source })?;
        if needs_newline {
            file.write_all(b"\n").map_err(|source| GatewayError::Checkpoint { path: p.clone(), source })?;
        }
        Ok(CheckpointWriter { file: Some(file), path: p })
    }

    fn append(&mut self, a: &RawAnnotation) -> Result<(), GatewayError> {
        let Some(file) = self.file.as_mut() else { return Ok(()) };
        let mut line = serde_json::to_string(a).expect("annotation serializes");
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| GatewayError::Checkpoint { path: self.path.clone(), source })
    }
}

/// Counts from one [`annotate_corpus`] call.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnnotateStats {
    pub total: usize,
    pub from_checkpoint: usize,
    pub sent: usize,
    pub ok: usize,
    pub failed: usize,
    pub unreachable: usize,
}

pub struct AnnotateOutput {
    pub annotations: Vec<RawAnnotation>,
    pub stats: AnnotateStats,
}

struct Job<'a> {
    record: &'a TweetRecord,
    prompt: String,
    key: (String, String),
}

/// Annotate every record, one [`RawAnnotation`] per record in input order.
pub fn annotate_corpus<B: CompletionBackend + ?Sized>(
    records: &[TweetRecord],
    template: &PromptTemplate,
    config: &BackendConfig,
    backend: &B,
    checkpoint_path: Option<&Path>,
) -> Result<AnnotateOutput, GatewayError> {
    config.validate()?;
    let family = template.family.short_name();
    let mut done: HashMap<(String, String), RawAnnotation> = match checkpoint_path {
        Some(p) => load_checkpoint(p)?
            .into_iter()
            .filter(|a| !(config.retry.resend_failed && a.status == AnnotationStatus::Failed))
            .map(|a| (a.key(), a))
            .collect(),
        None => HashMap::new(),
    };

    let mut slots: Vec<Option<RawAnnotation>> = vec![None; records.len()];
    let mut jobs: Vec<Job<'_>> = Vec::new();
    let mut job_of_slot: Vec<Option<usize>> = vec![None; records.len()];
    let mut queued: HashMap<(String, String), usize> = HashMap::new();
    let mut stats = AnnotateStats { total: records.len(), ..Default::default() };

    for (i, record) in records.iter().enumerate() {
        let prompt = match render(template, &record.text) {
            Ok(p) => p,
            Err(e) => {
                slots[i] = Some(RawAnnotation {
                    tweet_id: record.id.clone(),
                    prompt_family: family.to_string(),
                    prompt_sha256: String::new(),
                    raw_output: String::new(),
                    attempts: 0,
                    latency_ms: 0,
                    status: AnnotationStatus::Failed,
                    error: Some(e.to_string()),
                    error_kind: Some(ErrorKind::Permanent),
                });
                continue;
            }
        };
        let key = (record.id.clone(), sha256_hex(&prompt));
        if let Some(a) = done.get(&key) {
            slots[i] = Some(a.clone());
            stats.from_checkpoint += 1;
            continue;
        }
        let j = *queued.entry(key.clone()).or_insert_with(|| {
            jobs.push(Job { record, prompt, key });
            jobs.len() - 1
        });
        job_of_slot[i] = Some(j);
    }

    stats.sent = jobs.len();
    let results: Vec<Mutex<Option<RawAnnotation>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let writer = Mutex::new(CheckpointWriter::open(checkpoint_path)?);
    let next = AtomicUsize::new(0);
    let write_error: Mutex<Option<GatewayError>> = Mutex::new(None);
    let workers = config.max_in_flight.min(jobs.len());

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(j) else { break };
                let request = CompletionRequest {
                    tweet_id: &job.record.id,
                    tweet_text: &job.record.text,
                    family: template.family,
                    prompt: &job.prompt,
                };
                let annotation = match complete(backend, config, &request) {
                    Ok(c) => RawAnnotation {
                        tweet_id: job.key.0.clone(),
                        prompt_family: family.to_string(),
                        prompt_sha256: job.key.1.clone(),
                        raw_output: c.text,
                        attempts: c.attempts,
                        latency_ms: c.latency.as_millis() as u64,
                        status: AnnotationStatus::Ok,
                        error: None,
                        error_kind: None,
                    },
                    Err(f) => {
                        tracing::warn!(tweet_id = %job.key.0, error = %f.error, attempts = f.attempts, "annotation failed");
                        RawAnnotation {
                            tweet_id: job.key.0.clone(),
                            prompt_family: family.to_string(),
                            prompt_sha256: job.key.1.clone(),
                            raw_output: String::new(),
                            attempts: f.attempts,
                            latency_ms: f.latency.as_millis() as u64,
                            status: AnnotationStatus::Failed,
                            error: Some(f.error.message.clone()),
                            error_kind: Some(f.error.kind),
                        }
                    }
                };
                if let Err(e) = writer.lock().expect("checkpoint lock").append(&annotation) {
                    write_error.lock().expect("error lock").get_or_insert(e);
                }
                *results[j].lock().expect("result lock") = Some(annotation);
            });
        }
    });

    if let Some(e) = write_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let results: Vec<RawAnnotation> =
        results.into_iter().map(|m| m.into_inner().expect("result lock").expect("every job ran")).collect();
    for a in &results {
        done.insert(a.key(), a.clone());
    }
    for (i, slot) in slots.iter_mut().enumerate() {
        if let Some(j) = job_of_slot[i] {
            *slot = Some(results[j].clone());
        }
    }
    for a in &results {
        match a.status {
            AnnotationStatus::Ok => stats.ok += 1,
            AnnotationStatus::Failed => {
                stats.failed += 1;
                if a.error_kind == Some(ErrorKind::Unreachable) {
                    stats.unreachable += 1;
                }
            }
        }
    }
    let annotations = slots.into_iter().map(|s| s.expect("every slot filled")).collect();
    Ok(AnnotateOutput { annotations, stats })
}

#[cfg(test)]
mod tests {
    use super::mock::{FixtureBackend, FlakyBackend, Instrumented};
    use super::*;
    use crate::corpus::parse_timestamp;

    fn records(n: usize) -> Vec<TweetRecord> {
        (0..n)
            .map(|i| TweetRecord {
                id: format!("t{i}"),
                created_at: parse_timestamp("2022-02-01 10:00:00").unwrap(),
                username: "u".into(),
                text: format!("tweet number {i}"),
                source_file: "mem".into(),
            })
            .collect()
    }

    fn fast_config(max_in_flight: usize, max_attempts: u32) -> BackendConfig {
        BackendConfig { max_in_flight, retry: RetryPolicy { max_attempts, base_backoff_ms: 0, resend_failed: false }, ..Default::default() }
    }

    fn fixture_for(recs: &[TweetRecord]) -> FixtureBackend {
        FixtureBackend::new(recs.iter().map(|r| (r.id.clone(), format!("out-{}", r.id))))
    }

    fn template() -> PromptTemplate {
        PromptTemplate::builtin(ChatFamily::ZephyrChat)
    }

    #[test]
    fn fixture_echo_is_byte_exact() {
        let recs = records(1);
        let backend = FixtureBackend::new([("t0".to_string(), "  {\"party\": \"BJP\"}\n".to_string())]);
        let req = CompletionRequest { tweet_id: "t0", tweet_text: &recs[0].text, family: ChatFamily::ZephyrChat, prompt: "p" };
        let c = complete(&backend, &fast_config(1, 1), &req).unwrap();
        assert_eq!(c.text, "  {\"party\": \"BJP\"}\n");
        assert_eq!(c.attempts, 1);
    }

    #[test]
    fn transient_failures_then_success() {
        let backend = FlakyBackend::new(FixtureBackend::new([("t0".to_string(), "ok".to_string())]), 2);
        let req = CompletionRequest { tweet_id: "t0", tweet_text: "x", family: ChatFamily::ZephyrChat, prompt: "p" };
        let c = complete(&backend, &fast_config(1, 3), &req).unwrap();
        assert_eq!(c.attempts, 3);
    }

    #[test]
    fn retries_exhausted() {
        let backend = FlakyBackend::new(FixtureBackend::new([("t0".to_string(), "ok".to_string())]), u32::MAX);
        let req = CompletionRequest { tweet_id: "t0", tweet_text: "x", family: ChatFamily::ZephyrChat, prompt: "p" };
        let f = complete(&backend, &fast_config(1, 1), &req).unwrap_err();
        assert_eq!(f.attempts, 1);
        let f = complete(&backend, &fast_config(1, 4), &req).unwrap_err();
        assert_eq!(f.attempts, 4);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let backend = FixtureBackend::new(Vec::<(String, String)>::new());
        let req = CompletionRequest { tweet_id: "missing", tweet_text: "x", family: ChatFamily::ZephyrChat, prompt: "p" };
        let f = complete(&backend, &fast_config(1, 5), &req).unwrap_err();
        assert_eq!((f.attempts, f.error.kind), (1, ErrorKind::Permanent));
    }

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy { max_attempts: 5, base_backoff_ms: 100, resend_failed: false };
        assert_eq!([r.backoff(1), r.backoff(2), r.backoff(3)], [100, 200, 400].map(Duration::from_millis));
    }

    #[test]
    fn order_preserved() {
        let recs = records(10);
        let backend = Instrumented::new(fixture_for(&recs)).with_delay(Duration::from_millis(2));
        let out = annotate_corpus(&recs, &template(), &fast_config(4, 1), &backend, None).unwrap();
        let ids: Vec<_> = out.annotations.iter().map(|a| a.tweet_id.as_str()).collect();
        let want: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, want);
        assert!(out.annotations.iter().all(|a| a.raw_output == format!("out-{}", a.tweet_id)));
    }

    #[test]
    fn peak_concurrency_bounded() {
        let recs = records(40);
        let backend = Instrumented::new(fixture_for(&recs)).with_delay(Duration::from_millis(5));
        annotate_corpus(&recs, &template(), &fast_config(4, 1), &backend, None).unwrap();
        assert!(backend.peak() <= 4, "peak {}", backend.peak());
        assert!(backend.peak() >= 2, "pool never overlapped");
        assert_eq!(backend.calls(), 40);
    }

    #[test]
    fn resume_sends_only_unfinished() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt.jsonl");
        let recs = records(10);
        let backend = Instrumented::new(fixture_for(&recs));
        annotate_corpus(&recs[..5], &template(), &fast_config(3, 1), &backend, Some(&ckpt)).unwrap();
        assert_eq!(backend.calls(), 5);
        let out = annotate_corpus(&recs, &template(), &fast_config(3, 1), &backend, Some(&ckpt)).unwrap();
        assert_eq!(backend.calls(), 10);
        assert_eq!((out.stats.from_checkpoint, out.stats.sent), (5, 5));
        let again = annotate_corpus(&recs, &template(), &fast_config(3, 1), &backend, Some(&ckpt)).unwrap();
        assert_eq!(backend.calls(), 10);
        assert_eq!(again.stats.sent, 0);
        assert_eq!(again.annotations, out.annotations);
    }

    #[test]
    fn truncated_checkpoint_line_is_resent() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt.jsonl");
        let recs = records(4);
        let backend = Instrumented::new(fixture_for(&recs));
        annotate_corpus(&recs, &template(), &fast_config(1, 1), &backend, Some(&ckpt)).unwrap();
        let body = fs::read_to_string(&ckpt).unwrap();
        let cut = body.trim_end().rfind('\n').unwrap() + 10;
        fs::write(&ckpt, &body[..cut]).unwrap();
        let out = annotate_corpus(&recs, &template(), &fast_config(1, 1), &backend, Some(&ckpt)).unwrap();
        assert_eq!(out.stats.sent, 1);
        assert_eq!(load_checkpoint(&ckpt).unwrap().len(), 4);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let recs = records(3);
        let backend = FixtureBackend::new([("t1".to_string(), "fine".to_string())]);
        let out = annotate_corpus(&recs, &template(), &fast_config(2, 2), &backend, None).unwrap();
        let st: Vec<_> = out.annotations.iter().map(|a| a.status).collect();
        assert_eq!(st, vec![AnnotationStatus::Failed, AnnotationStatus::Ok, AnnotationStatus::Failed]);
        assert!(out.annotations.iter().all(|a| a.attempts <= 2));
        assert_eq!(out.stats.failed, 2);
    }

    #[test]
    fn failed_entries_resent_only_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt.jsonl");
        let recs = records(3);
        let broken = FixtureBackend::new([("t1".to_string(), "fine".to_string())]);
        annotate_corpus(&recs, &template(), &fast_config(1, 1), &broken, Some(&ckpt)).unwrap();
        let healthy = Instrumented::new(fixture_for(&recs));
        let out = annotate_corpus(&recs, &template(), &fast_config(1, 1), &healthy, Some(&ckpt)).unwrap();
        assert_eq!((healthy.calls(), out.stats.failed), (0, 0));
        assert_eq!(out.annotations[0].status, AnnotationStatus::Failed);
        let mut cfg = fast_config(1, 1);
        cfg.retry.resend_failed = true;
        let out = annotate_corpus(&recs, &template(), &cfg, &healthy, Some(&ckpt)).unwrap();
        assert_eq!(healthy.calls(), 2);
        assert!(out.annotations.iter().all(|a| a.status == AnnotationStatus::Ok));
        let again = annotate_corpus(&recs, &template(), &fast_config(1, 1), &healthy, Some(&ckpt)).unwrap();
        assert_eq!(healthy.calls(), 2);
        assert_eq!(again.annotations, out.annotations);
    }

    #[test]
    fn config_validation() {
        assert!(fast_config(0, 1).validate().is_err());
        assert!(fast_config(1, 0).validate().is_err());
        assert!(BackendConfig { temperature: -0.1, ..Default::default() }.validate().is_err());
        assert!(BackendConfig::default().validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn order_kept_and_rerun_sends_nothing(n in 0usize..40, workers in 1usize..6) {
                let dir = tempfile::tempdir().unwrap();
                let ckpt = dir.path().join("ckpt.jsonl");
                let recs = records(n);
                let backend = Instrumented::new(fixture_for(&recs));
                let out = annotate_corpus(&recs, &template(), &fast_config(workers, 1), &backend, Some(&ckpt)).unwrap();
                prop_assert_eq!(out.annotations.len(), n);
                for (a, r) in out.annotations.iter().zip(&recs) {
                    prop_assert_eq!(&a.tweet_id, &r.id);
                }
                prop_assert!(backend.peak() <= workers);
                let again = annotate_corpus(&recs, &template(), &fast_config(workers, 1), &backend, Some(&ckpt)).unwrap();
                prop_assert_eq!(backend.calls() as usize, n);
                prop_assert_eq!(again.stats.sent, 0);
                prop_assert_eq!(again.annotations, out.annotations);
            }
        }
    }
}
