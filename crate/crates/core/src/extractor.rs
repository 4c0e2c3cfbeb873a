//! Recovery of `(party, state, sentiment)` mentions from raw model output.
//!
//! Three stages are tried in order and the first one that yields at least one
//! valid mention wins:
//!
//! 1. [`Stage::DirectJson`]: the whole output is JSON (an object, or an array
//!    of objects).
//! 2. [`Stage::RegexJson`]: balanced `{...}` / `[...]` spans embedded in the
//!    output are parsed as JSON, longest span first, then left to right.
//! 3. [`Stage::TokenScavenge`]: the value following each `party`, `state`
//!    and `sentiment_score` key is captured, and keys are grouped into
//!    mentions in textual order.
//!
//! Nothing here panics or returns an error; failure is [`Stage::Failed`].

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Upper bound on embedded JSON candidates tried in stage 2.
const MAX_SPAN_CANDIDATES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DirectJson,
    RegexJson,
    TokenScavenge,
    Failed,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::DirectJson, Stage::RegexJson, Stage::TokenScavenge, Stage::Failed];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DirectJson => "direct_json",
            Stage::RegexJson => "regex_json",
            Stage::TokenScavenge => "token_scavenge",
            Stage::Failed => "failed",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sentiment as found in the output, before validation.
#[derive(Debug, Clone, PartialEq)]
pub enum SentimentValue {
    Number(f64),
    Text(String),
    Missing,
}

impl SentimentValue {
    fn from_text(s: &str) -> Self {
        match s.trim().parse::<f64>() {
            Ok(v) => SentimentValue::Number(v),
            Err(_) => SentimentValue::Text(s.to_string()),
        }
    }
}

/// An unvalidated mention.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionCandidate {
    pub party_raw: String,
    pub state_raw: String,
    pub sentiment: SentimentValue,
}

/// A validated mention; `sentiment` is finite and within `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMention {
    #[serde(rename = "party")]
    pub party_raw: String,
    #[serde(rename = "state")]
    pub state_raw: String,
    #[serde(rename = "sentiment_score")]
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    Accepted { mention: RawMention, warning: Option<String> },
    Rejected { reason: String },
}

/// Check one candidate: clamp out-of-range sentiment, reject non-numeric
/// sentiment and empty party.
pub fn validate_mention(c: &MentionCandidate) -> Validation {
    let party = c.party_raw.trim();
    if party.is_empty() {
        return Validation::Rejected { reason: "empty party".into() };
    }
    let value = match &c.sentiment {
        SentimentValue::Number(v) if v.is_finite() => *v,
        SentimentValue::Number(v) => return Validation::Rejected { reason: format!("non-finite sentiment {v}") },
        SentimentValue::Text(t) => return Validation::Rejected { reason: format!("non-numeric sentiment `{t}`") },
        SentimentValue::Missing => return Validation::Rejected { reason: "missing sentiment".into() },
    };
    let clamped = value.clamp(-1.0, 1.0);
    let warning = (clamped != value).then(|| format!("sentiment {value} clamped to {clamped}"));
    Validation::Accepted {
        mention: RawMention { party_raw: party.to_string(), state_raw: c.state_raw.trim().to_string(), sentiment: clamped },
        warning,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionResult {
    pub tweet_id: String,
    pub mentions: Vec<RawMention>,
    pub stage: Stage,
    pub warnings: Vec<String>,
}

/// Serialize mentions in the array format the annotation prompts request.
pub fn mentions_to_json(mentions: &[RawMention]) -> String {
    serde_json::to_string(mentions).expect("mentions serialize")
}

pub fn extract(raw_output: &str) -> ExtractionResult {
    extract_for("", raw_output)
}

pub fn extract_for(tweet_id: &str, raw_output: &str) -> ExtractionResult {
    let text = raw_output.trim_start_matches('\u{feff}').trim();
    let mut warnings = Vec::new();

    if let Ok(value) = serde_json::from_str::<Value>(text) {
        if let Some(mentions) = accept(json_candidates(&value), &mut warnings) {
            return done(tweet_id, mentions, Stage::DirectJson, warnings);
        }
    }

    for (start, end) in balanced_spans(text).into_iter().take(MAX_SPAN_CANDIDATES) {
        let Ok(value) = serde_json::from_str::<Value>(&text[start..end]) else { continue };
        let mut span_warnings = Vec::new();
        if let Some(mentions) = accept(json_candidates(&value), &mut span_warnings) {
            warnings.extend(span_warnings);
            return done(tweet_id, mentions, Stage::RegexJson, warnings);
        }
    }

    let mut scavenge_warnings = Vec::new();
    let candidates = scavenge(text, &mut scavenge_warnings);
    if let Some(mentions) = accept(candidates, &mut scavenge_warnings) {
        warnings.extend(scavenge_warnings);
        return done(tweet_id, mentions, Stage::TokenScavenge, warnings);
    }

    warnings.extend(scavenge_warnings);
    done(tweet_id, Vec::new(), Stage::Failed, warnings)
}

fn done(tweet_id: &str, mentions: Vec<RawMention>, stage: Stage, warnings: Vec<String>) -> ExtractionResult {
    ExtractionResult { tweet_id: tweet_id.to_string(), mentions, stage, warnings }
}

/// Validate candidates; `None` when none survive (rejection reasons are kept
/// as warnings either way).
fn accept(candidates: Vec<MentionCandidate>, warnings: &mut Vec<String>) -> Option<Vec<RawMention>> {
    let mut out = Vec::new();
    for c in &candidates {
        match validate_mention(c) {
            Validation::Accepted { mention, warning } => {
                warnings.extend(warning);
                out.push(mention);
            }
            Validation::Rejected { reason } => warnings.push(format!("rejected mention: {reason}")),
        }
    }
    (!out.is_empty()).then_some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Party,
    State,
    Sentiment,
}

fn classify_key(key: &str) -> Option<Field> {
    let norm: String = key
        .trim()
        .to_lowercase()
        .split([' ', '_', '-'])
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_");
    match norm.as_str() {
        "party" | "party_name" => Some(Field::Party),
        "state" | "state_name" => Some(Field::State),
        "sentiment_score" | "sentiment" | "score" => Some(Field::Sentiment),
        _ => None,
    }
}

fn json_scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn object_candidate(obj: &Map<String, Value>) -> Option<MentionCandidate> {
    let mut party = None;
    let mut state = None;
    let mut sentiment = None;
    for (k, v) in obj {
        match classify_key(k) {
            Some(Field::Party) if party.is_none() => party = Some(json_scalar_text(v)),
            Some(Field::State) if state.is_none() => state = Some(json_scalar_text(v)),
            Some(Field::Sentiment) if sentiment.is_none() => {
                sentiment = Some(match v {
                    Value::Number(n) => n.as_f64().map_or(SentimentValue::Text(n.to_string()), SentimentValue::Number),
                    Value::String(s) => SentimentValue::from_text(s),
                    Value::Null => SentimentValue::Missing,
                    other => SentimentValue::Text(other.to_string()),
                })
            }
            _ => {}
        }
    }
    if party.is_none() && state.is_none() && sentiment.is_none() {
        return None;
    }
    Some(MentionCandidate {
        party_raw: party.unwrap_or_default(),
        state_raw: state.unwrap_or_default(),
        sentiment: sentiment.unwrap_or(SentimentValue::Missing),
    })
}

/// Mention-shaped objects in a JSON value. Objects without any mention key
/// are searched one level at a time (e.g. `{"result": [...]}`).
fn json_candidates(value: &Value) -> Vec<MentionCandidate> {
    let mut out = Vec::new();
    collect_candidates(value, &mut out, 0);
    out
}

fn collect_candidates(value: &Value, out: &mut Vec<MentionCandidate>, depth: usize) {
    if depth > 8 {
        return;
    }
    match value {
        Value::Object(obj) => match object_candidate(obj) {
            Some(c) => out.push(c),
            None => obj.values().for_each(|v| collect_candidates(v, out, depth + 1)),
        },
        Value::Array(items) => items.iter().for_each(|v| collect_candidates(v, out, depth + 1)),
        _ => {}
    }
}

/// Byte ranges of every balanced bracket span, ordered longest first and then
/// by position. String literals are honoured inside spans; unmatched or
/// mismatched brackets discard the enclosing partial spans.
pub fn balanced_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' if !stack.is_empty() => in_string = true,
            '{' | '[' => stack.push((ch, i)),
            '}' | ']' => {
                let want = if ch == '}' { '{' } else { '[' };
                match stack.pop() {
                    Some((open, start)) if open == want => spans.push((start, i + 1)),
                    Some(_) => stack.clear(),
                    None => {}
                }
            }
            _ => {}
        }
    }
    spans.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    spans
}

static KEY_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)["'“‘]?\b(party[ _]name|party|state[ _]name|state|sentiment[ _]score|sentiment|score)\b["'”’]?\s*(?::|=>|=)\s*"#,
    )
    .expect("key regex")
});

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").expect("number regex"));

struct KeyHit {
    field: Field,
    key_start: usize,
    value_start: usize,
}

#[derive(Default)]
struct Partial {
    party: Option<String>,
    state: Option<String>,
    sentiment: Option<SentimentValue>,
}

impl Partial {
    fn has(&self, f: Field) -> bool {
        match f {
            Field::Party => self.party.is_some(),
            Field::State => self.state.is_some(),
            Field::Sentiment => self.sentiment.is_some(),
        }
    }

    fn is_empty(&self) -> bool {
        self.party.is_none() && self.state.is_none() && self.sentiment.is_none()
    }

    fn complete(&self) -> bool {
        self.party.is_some() && self.state.is_some() && self.sentiment.is_some()
    }
}

/// Read a quoted value starting at `pos`; returns the inner text and the end
/// offset just past the closing quote.
fn quoted_value(text: &str, pos: usize) -> Option<(String, usize)> {
    let mut chars = text[pos..].char_indices();
    let (_, open) = chars.next()?;
    let close = match open {
        '"' => '"',
        '\'' => '\'',
        '\u{201c}' => '\u{201d}',
        '\u{2018}' => '\u{2019}',
        _ => return None,
    };
    let body_start = pos + open.len_utf8();
    let mut escaped = false;
    for (off, ch) in chars {
        if escaped {
            escaped = false;
            continue;
        }
        if ch == '\\' && close == '"' {
            escaped = true;
        } else if ch == close {
            let end = pos + off;
            return Some((text[body_start..end].to_string(), end + ch.len_utf8()));
        } else if ch == '\n' {
            break;
        }
    }
    // unterminated: run to end of line
    let end = text[body_start..].find('\n').map_or(text.len(), |o| body_start + o);
    Some((text[body_start..end].to_string(), end))
}

fn bare_value(text: &str, pos: usize, limit: usize) -> (String, usize) {
    let slice = &text[pos..limit];
    let end = slice.find([',', ';', '}', ']', '\n', '\r', '|']).unwrap_or(slice.len());
    let value = slice[..end].trim().trim_end_matches(['.', '"', '\'']).trim();
    (value.to_string(), pos + end)
}

fn scavenge(text: &str, warnings: &mut Vec<String>) -> Vec<MentionCandidate> {
    let hits: Vec<KeyHit> = KEY_RE
        .captures_iter(text)
        .filter_map(|c| {
            let whole = c.get(0)?;
            Some(KeyHit { field: classify_key(c.get(1)?.as_str())?, key_start: whole.start(), value_start: whole.end() })
        })
        .collect();

    let mut out = Vec::new();
    let mut partial = Partial::default();
    let mut consumed = 0usize;
    for (idx, hit) in hits.iter().enumerate() {
        if hit.key_start < consumed {
            continue;
        }
        let limit = hits[idx + 1..].iter().map(|h| h.key_start).find(|&s| s >= hit.value_start).unwrap_or(text.len());
        let (value, end) = match quoted_value(text, hit.value_start) {
            Some(v) => v,
            None if hit.field == Field::Sentiment => match NUMBER_RE.find(&text[hit.value_start..limit]) {
                Some(m) => (m.as_str().to_string(), hit.value_start + m.end()),
                None => bare_value(text, hit.value_start, limit),
            },
            None => bare_value(text, hit.value_start, limit),
        };
        consumed = end;

        if partial.has(hit.field) {
            warnings.push("incomplete mention dropped during token scavenging".into());
            partial = Partial::default();
        }
        match hit.field {
            Field::Party => partial.party = Some(value),
            Field::State => partial.state = Some(value),
            Field::Sentiment => partial.sentiment = Some(SentimentValue::from_text(&value)),
        }
        if partial.complete() {
            let p = std::mem::take(&mut partial);
            out.push(MentionCandidate {
                party_raw: p.party.unwrap_or_default(),
                state_raw: p.state.unwrap_or_default(),
                sentiment: p.sentiment.unwrap_or(SentimentValue::Missing),
            });
        }
    }
    if !partial.is_empty() {
        warnings.push("incomplete mention dropped during token scavenging".into());
    }
    out
}

/// Count of results per stage, in [`Stage::ALL`] order.
pub fn stage_histogram<'a>(results: impl IntoIterator<Item = &'a ExtractionResult>) -> Vec<(Stage, usize)> {
    let mut counts = [0usize; 4];
    for r in results {
        counts[Stage::ALL.iter().position(|s| *s == r.stage).unwrap_or(3)] += 1;
    }
    Stage::ALL.iter().copied().zip(counts).collect()
}
