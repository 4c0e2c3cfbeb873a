//! Pipeline configuration file (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every optional knob defaults to the pipeline's standard behaviour.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonicalizer::{PartyUniverse, DEFAULT_COVERAGE_TARGET};
use crate::corpus::CorpusFormat;
use crate::evaluator::Precision;
use crate::gateway::BackendConfig;
use crate::polls::Combiner;
use crate::prompt_kit::ChatFamily;
use crate::types::{Party, State};
use crate::voteshare::{AggregateOptions, ShareOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub paths: Vec<PathBuf>,
    /// `jsonl` or `csv`; inferred from each file's extension when absent.
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub queries: Option<PathBuf>,
    #[serde(default = "yes")]
    pub filter_by_queries: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    /// Template manifest; the bundled templates are used when absent.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_families")]
    pub families: Vec<String>,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection { manifest: None, families: default_families() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AliasSection {
    /// Alias CSV; the bundled table is used when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub coverage_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PollSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub combiner: Combiner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ResultsSection {
    /// `state,party,percent` or `source,state,party,percent`.
    #[serde(default)]
    pub actual: Option<PathBuf>,
    /// Previously published forecasts, `source,state,party,percent`.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InvalidMethodPolicy {
    /// Drop the method from the ensemble and renormalize.
    #[default]
    Exclude,
    /// Treat any undefined method as a data error.
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// Whole percent when every compared table is whole-percent.
    #[default]
    Auto,
    WholePercent,
    Full,
}

impl PrecisionMode {
    pub fn fixed(self) -> Option<Precision> {
        match self {
            PrecisionMode::Auto => None,
            PrecisionMode::WholePercent => Some(Precision::WholePercent),
            PrecisionMode::Full => Some(Precision::Full),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    #[serde(default = "yes")]
    pub normalize_cross_party: bool,
    #[serde(default = "yes")]
    pub neutral_in_tv: bool,
    #[serde(default)]
    pub include_other: bool,
    #[serde(default)]
    pub invalid_method: InvalidMethodPolicy,
    #[serde(default)]
    pub precision: PrecisionMode,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            normalize_cross_party: true,
            neutral_in_tv: true,
            include_other: false,
            invalid_method: InvalidMethodPolicy::Exclude,
            precision: PrecisionMode::Auto,
        }
    }
}

impl Knobs {
    pub fn share_options(&self) -> ShareOptions {
        ShareOptions { normalize_cross_party: self.normalize_cross_party, include_other: self.include_other }
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions { neutral_in_tv: self.neutral_in_tv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Source pairs for pooled model-vs-model deviation. Defaults to
    /// `LLAMA2`/`ZEPHYR` and the two families' ensembles when present.
    #[serde(default)]
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub corpus: Option<CorpusSection>,
    #[serde(default)]
    pub prompts: PromptSection,
    #[serde(default)]
    pub backend: BackendConfig,
    /// Per-family backend overrides keyed by family short name.
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub aliases: AliasSection,
    /// Parties contesting each state; the two-state default when absent.
    #[serde(default)]
    pub universe: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub polls: PollSection,
    #[serde(default)]
    pub results: ResultsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub knobs: Knobs,
    #[serde(default)]
    pub compare: CompareSection,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn yes() -> bool {
    true
}

fn default_families() -> Vec<String> {
    vec!["llama2".into(), "zephyr".into()]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), reason: e.to_string() })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: p.clone(), reason: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &p, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn families(&self) -> Result<Vec<ChatFamily>, ConfigError> {
        let mut out = Vec::new();
        for f in &self.prompts.families {
            let fam = ChatFamily::parse(f).ok_or_else(|| invalid("prompts.families", format!("unknown family `{f}`")))?;
            if !out.contains(&fam) {
                out.push(fam);
            }
        }
        if out.is_empty() {
            return Err(invalid("prompts.families", "at least one family is required"));
        }
        Ok(out)
    }

    pub fn backend_for(&self, family: ChatFamily) -> BackendConfig {
        self.backends.get(family.short_name()).cloned().unwrap_or_else(|| self.backend.clone())
    }

    pub fn party_universe(&self) -> PartyUniverse {
        match &self.universe {
            None => PartyUniverse::default(),
            Some(m) => PartyUniverse(
                m.iter().map(|(s, ps)| (State::new(s.clone()), ps.iter().map(|p| Party::new(p.clone())).collect())).collect(),
            ),
        }
    }

    pub fn coverage_target(&self) -> f64 {
        self.aliases.coverage_target.unwrap_or(DEFAULT_COVERAGE_TARGET)
    }

    pub fn corpus_format(&self, path: &Path) -> Result<CorpusFormat, ConfigError> {
        let corpus = self.corpus.as_ref().ok_or_else(|| invalid("corpus", "section missing"))?;
        match &corpus.format {
            Some(f) => CorpusFormat::parse(f).map_err(|e| invalid("corpus.format", e.to_string())),
            None => CorpusFormat::from_path(path)
                .ok_or_else(|| invalid("corpus.format", format!("cannot infer format of {}; set it explicitly", path.display()))),
        }
    }

    /// Check knob ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.families()?;
        self.backend.validate().map_err(|e| invalid("backend", e.to_string()))?;
        for (name, b) in &self.backends {
            if ChatFamily::parse(name).is_none() {
                return Err(invalid(&format!("backends.{name}"), "unknown family"));
            }
            b.validate().map_err(|e| invalid(&format!("backends.{name}"), e.to_string()))?;
        }
        let t = self.coverage_target();
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid("aliases.coverage_target", "must lie in [0, 1]"));
        }
        if let Some(u) = &self.universe {
            if u.is_empty() {
                return Err(invalid("universe", "no states configured"));
            }
            for (s, ps) in u {
                if ps.is_empty() {
                    return Err(invalid(&format!("universe.{s}"), "no parties configured"));
                }
            }
        }
        let mut files: Vec<(String, &PathBuf)> = Vec::new();
        if let Some(c) = &self.corpus {
            if c.paths.is_empty() {
                return Err(invalid("corpus.paths", "no corpus files listed"));
            }
            files.extend(c.paths.iter().map(|p| ("corpus.paths".to_string(), p)));
            if let Some(q) = &c.queries {
                files.push(("corpus.queries".into(), q));
            } else if c.filter_by_queries {
                return Err(invalid("corpus.queries", "required when corpus.filter_by_queries is true"));
            }
            for p in &c.paths {
                self.corpus_format(&self.resolve(p))?;
            }
        }
        let optional = [
            ("prompts.manifest", &self.prompts.manifest),
            ("aliases.path", &self.aliases.path),
            ("polls.path", &self.polls.path),
            ("results.actual", &self.results.actual),
            ("results.reference", &self.results.reference),
        ];
        files.extend(optional.into_iter().filter_map(|(k, p)| p.as_ref().map(|p| (k.to_string(), p))));
        for (key, p) in files {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(invalid(&key, format!("file not found: {}", full.display())));
            }
        }
        Ok(())
    }

    /// Short digest of the configuration as written, used to stamp run
    /// directories. The output location does not contribute.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let canonical = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir).join(format!("run-{}", self.hash()))
    }
}
