//! Offline backends for tests, demos and `--mock` runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};
use std::thread;
use std::time::Duration;

use regex::Regex;

use super::{BackendConfig, BackendError, CompletionBackend, CompletionRequest};
use crate::prompt_kit::ChatFamily;

/// Replies with a fixed output per tweet id; unknown ids fail permanently.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    outputs: HashMap<String, String>,
}

impl FixtureBackend {
    pub fn new<I: IntoIterator<Item = (String, String)>>(outputs: I) -> Self {
        FixtureBackend { outputs: outputs.into_iter().collect() }
    }
}

impl CompletionBackend for FixtureBackend {
    fn complete(&self, request: &CompletionRequest<'_>, _: &BackendConfig) -> Result<String, BackendError> {
        self.outputs
            .get(request.tweet_id)
            .cloned()
            .ok_or_else(|| BackendError::permanent(format!("no fixture for tweet {}", request.tweet_id)))
    }
}

/// Fails the first `failures` calls for every tweet id with a transient
/// error, then delegates.
#[derive(Debug)]
pub struct FlakyBackend<B> {
    inner: B,
    failures: u32,
    seen: Mutex<HashMap<String, u32>>,
}

impl<B> FlakyBackend<B> {
    pub fn new(inner: B, failures: u32) -> Self {
        FlakyBackend { inner, failures, seen: Mutex::new(HashMap::new()) }
    }
}

impl<B: CompletionBackend> CompletionBackend for FlakyBackend<B> {
    fn complete(&self, request: &CompletionRequest<'_>, config: &BackendConfig) -> Result<String, BackendError> {
        let n = {
            let mut seen = self.seen.lock().expect("flaky lock");
            let n = seen.entry(request.tweet_id.to_string()).or_insert(0);
            *n += 1;
            *n
        };
        if n <= self.failures {
            return Err(BackendError::transient(format!("scripted failure {n}")));
        }
        self.inner.complete(request, config)
    }
}

/// Always fails as if the endpoint could not be reached.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnreachableBackend;

impl CompletionBackend for UnreachableBackend {
    fn complete(&self, _: &CompletionRequest<'_>, _: &BackendConfig) -> Result<String, BackendError> {
        Err(BackendError::unreachable("connection refused"))
    }
}

/// Wraps a backend and counts calls and simultaneous in-flight calls.
#[derive(Debug)]
pub struct Instrumented<B> {
    inner: B,
    delay: Duration,
    calls: AtomicU32,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl<B> Instrumented<B> {
    pub fn new(inner: B) -> Self {
        Instrumented {
            inner,
            delay: Duration::ZERO,
            calls: AtomicU32::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// Hold every call open for `delay` so overlapping calls are observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl<B: CompletionBackend> CompletionBackend for Instrumented<B> {
    fn complete(&self, request: &CompletionRequest<'_>, config: &BackendConfig) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            thread::sleep(self.delay);
        }
        let out = self.inner.complete(request, config);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// Deterministic stand-in for an annotating model.
///
/// Parties and states are spotted with keyword rules, sentiment comes from a
/// small word list plus a per-tweet jitter, and the output style (clean JSON,
/// JSON inside prose, loose `key: value` text, or a refusal) is picked from a
/// hash of the tweet id. Llama-2 prompts get an object per mention, Zephyr
/// prompts a JSON array, mirroring the two templates.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimulatedAnnotator;

struct Rule {
    re: Regex,
    label: &'static str,
}

fn rules(spec: &[(&str, &'static str)]) -> Vec<Rule> {
    spec.iter()
        .map(|(pat, label)| Rule { re: Regex::new(&format!(r"(?i){pat}")).expect("static pattern"), label })
        .collect()
}

static PARTY_RULES: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    rules(&[
        (r"\bbjp|\bmodi|\byogi|myogiadityanath|amitshah|amit shah|jpnadda|bharatiya janata", "BJP"),
        (r"congress|\binc|\brahul|\bpriyanka|\bchanni|charanjitchanni|\bsidhu\b", "INC"),
        (r"\baap\b|#aap|aappunjab|kejriwal|bhagwant|aam ?aadmi|sisodia|lokandacm", "AAP"),
        (r"akali|\bsad\b|badal|sukhbir|majithia|officialyad|\bsgpc\b", "SAD"),
        (r"samajwadi|\bsp\b|akhilesh|shivpal|mulayam", "SP"),
        (r"\bbsp|bspindia|mayawati|behenji|bahujan samaj|satishmisrabsp", "BSP"),
        (r"\baimim\b|owaisi", "AIMIM"),
        (r"\brld\b|jayant chaudhary", "RLD"),
    ])
});

static STATE_RULES: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    rules(&[
        (r"punjab", "Punjab"),
        (r"\bamritsar\b", "Amritsar"),
        (r"\bludhiana\b", "Ludhiana"),
        (r"\bjalandhar\b", "Jalandhar"),
        (r"\bpatiala\b", "Patiala"),
        (r"\bmohali\b", "Mohali"),
        (r"uttar ?pradesh", "Uttar Pradesh"),
        (r"\bup\b|upelection", "UP"),
        (r"\blucknow\b", "Lucknow"),
        (r"\bvaranasi\b", "Varanasi"),
        (r"\bgorakhpur\b", "Gorakhpur"),
        (r"\bjaunpur\b", "Jaunpur"),
        (r"\bamethi\b", "Amethi"),
        (r"\bnoida\b", "Noida"),
        (r"\bkanpur\b", "Kanpur"),
        (r"\bagra\b", "Agra"),
    ])
});

const POSITIVE: &[&str] = &[
    "win", "wins", "winning", "victory", "support", "love", "great", "best", "good", "zindabad", "development",
    "trust", "hope", "strong", "landslide", "thank", "proud", "clean", "vote for",
];
const NEGATIVE: &[&str] = &[
    "corrupt", "fail", "failed", "failure", "shame", "worst", "lies", "liar", "bad", "against", "goback", "scam",
    "loot", "jumla", "angry", "never", "arrogant", "riots", "crime", "modigoback",
];

const PARTY_SPELLINGS: &[(&str, &[&str])] = &[
    ("BJP", &["BJP", "Bharatiya Janata Party (BJP)", "Bhartiya Janta Party"]),
    ("INC", &["INC", "Congress", "Indian National Congress (INC)"]),
    ("AAP", &["AAP", "Aam Aadmi Party (AAP)", "Aam Aadmi Party"]),
    ("SAD", &["SAD", "Shiromani Akali Dal (SAD)", "Akali Dal"]),
    ("SP", &["SP", "Samajwadi Party (SP)", "Samajwadi Party"]),
    ("BSP", &["BSP", "Bahujan Samaj Party (BSP)"]),
    ("AIMIM", &["AIMIM", "All India Majlis-e-Ittehadul Muslimeen"]),
    ("RLD", &["RLD", "Rashtriya Lok Dal"]),
];

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn count_words(text: &str, words: &[&str]) -> i32 {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    let joined = format!(" {} ", tokens.join(" "));
    words.iter().filter(|w| joined.contains(&format!(" {w} "))).count() as i32
}

fn home_state(party: &str, h: u64) -> &'static str {
    match party {
        "SAD" => "Punjab",
        "SP" | "BSP" | "AIMIM" | "RLD" => "Uttar Pradesh",
        _ if h % 2 == 0 => "Punjab",
        _ => "Uttar Pradesh",
    }
}

impl SimulatedAnnotator {
    /// The `(party, state, sentiment)` triples the simulated model reports.
    pub fn mentions(tweet_id: &str, text: &str) -> Vec<(String, String, f64)> {
        let h = fnv1a(&[tweet_id, text]);
        let states: Vec<&str> = STATE_RULES.iter().filter(|r| r.re.is_match(text)).map(|r| r.label).collect();
        let score = count_words(text, POSITIVE) - count_words(text, NEGATIVE);
        let jitter = ((h >> 8) % 21) as f64 / 100.0 - 0.1;
        let mut out = Vec::new();
        for (k, rule) in PARTY_RULES.iter().filter(|r| r.re.is_match(text)).enumerate() {
            let ph = h.rotate_left(7 * (k as u32 + 1));
            let spellings = PARTY_SPELLINGS.iter().find(|(c, _)| *c == rule.label).map(|(_, s)| *s).unwrap_or(&[]);
            let party = spellings.get((ph % 4) as usize).copied().unwrap_or(rule.label);
            let state = states.first().copied().unwrap_or_else(|| home_state(rule.label, ph));
            let base = if score == 0 { 0.0 } else { (0.35 * f64::from(score)).clamp(-0.95, 0.95) };
            let s = if score == 0 && ph % 3 != 0 { 0.0 } else { base + jitter };
            let s = (s * 100.0).round() / 100.0;
            out.push((party.to_string(), state.to_string(), s));
        }
        out
    }
}

fn json_object(party: &str, state: &str, s: f64) -> String {
    format!(
        "{{\"party\": {}, \"state\": {}, \"sentiment_score\": {s}}}",
        serde_json::Value::from(party),
        serde_json::Value::from(state)
    )
}

impl CompletionBackend for SimulatedAnnotator {
    fn complete(&self, request: &CompletionRequest<'_>, _: &BackendConfig) -> Result<String, BackendError> {
        let h = fnv1a(&[request.tweet_id, request.family.short_name()]);
        let mentions = Self::mentions(request.tweet_id, request.tweet_text);
        if mentions.is_empty() || h % 50 == 0 {
            return Ok("I could not identify any political party in this tweet.".to_string());
        }
        let objects: Vec<String> = mentions.iter().map(|(p, st, s)| json_object(p, st, *s)).collect();
        let body = match request.family {
            ChatFamily::ZephyrChat => format!("[{}]", objects.join(", ")),
            ChatFamily::Llama2Chat if objects.len() == 1 => objects[0].clone(),
            ChatFamily::Llama2Chat => objects.join("\n"),
        };
        let out = match h % 20 {
            0..=13 => body,
            14..=16 => format!("Sure! Here is the analysis of the tweet:\n\n{body}\n\nLet me know if you need anything else."),
            _ => mentions
                .iter()
                .map(|(p, st, s)| format!("party: {p}, state: {st}, sentiment_score: {s}"))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{extract, Stage};

    fn req<'a>(id: &'a str, text: &'a str, family: ChatFamily) -> CompletionRequest<'a> {
        CompletionRequest { tweet_id: id, tweet_text: text, family, prompt: "" }
    }

    #[test]
    fn simulated_output_is_deterministic_and_extractable() {
        let cfg = BackendConfig::default();
        let mut stages = std::collections::BTreeSet::new();
        for i in 0..200 {
            let id = format!("{i}");
            let text = "AAP will win big in Punjab, Congress failed";
            for fam in ChatFamily::ALL {
                let a = SimulatedAnnotator.complete(&req(&id, text, fam), &cfg).unwrap();
                let b = SimulatedAnnotator.complete(&req(&id, text, fam), &cfg).unwrap();
                assert_eq!(a, b);
                stages.insert(extract(&a).stage);
            }
        }
        for s in [Stage::DirectJson, Stage::RegexJson, Stage::TokenScavenge, Stage::Failed] {
            assert!(stages.contains(&s), "{s} never produced");
        }
    }

    #[test]
    fn keyword_rules() {
        let m = SimulatedAnnotator::mentions("1", "Akhilesh rally in Lucknow was great");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].1, "Lucknow");
        assert!(m[0].2 > 0.0);
        let m = SimulatedAnnotator::mentions("2", "Badal family is corrupt");
        assert_eq!(m[0].1, "Punjab");
        assert!(m[0].2 < 0.0);
        assert!(SimulatedAnnotator::mentions("3", "nice weather today").is_empty());
    }
}
