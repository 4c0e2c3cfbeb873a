//! Annotation prompt templates and chat-format rendering.
//!
//! Template text lives in asset files (`assets/templates/`); this module only
//! applies the chat wrapper of the model family and substitutes the post.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker replaced by the post body.
pub const TWEET_PLACEHOLDER: &str = "{tweet}";

/// Sentiment range both templates ask the model to respect.
pub const SENTIMENT_RANGE: (f64, f64) = (-1.0, 1.0);

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("user text must contain exactly one `{{tweet}}` placeholder, found {0}")]
    Placeholder(usize),
    #[error("template `{0}` lists no allowed {1}")]
    EmptyUniverse(String, &'static str),
    #[error("tweet text is empty")]
    EmptyTweet,
    #[error("cannot read template asset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid template manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("no template for family `{0}` in manifest")]
    MissingFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatFamily {
    Llama2Chat,
    ZephyrChat,
}

impl ChatFamily {
    pub const ALL: [ChatFamily; 2] = [ChatFamily::Llama2Chat, ChatFamily::ZephyrChat];

    /// Accepts `llama2`, `llama2_chat`, `zephyr`, `zephyr_chat`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "llama2" | "llama2_chat" | "llama_2" => Some(ChatFamily::Llama2Chat),
            "zephyr" | "zephyr_chat" => Some(ChatFamily::ZephyrChat),
            _ => None,
        }
    }

    /// Short name used in file names and reports.
    pub fn short_name(self) -> &'static str {
        match self {
            ChatFamily::Llama2Chat => "llama2",
            ChatFamily::ZephyrChat => "zephyr",
        }
    }

    fn wrap(self, system: &str, user: &str) -> String {
        match self {
            ChatFamily::Llama2Chat => format!("<s>[INST]<<SYS>>\n{system}\n<</SYS>>\n{user} [/INST]"),
            ChatFamily::ZephyrChat => format!("<|system|>\n{system} </s>\n<|user|>\n{user}\n</s>\n<|assistant|>"),
        }
    }
}

impl fmt::Display for ChatFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub family: ChatFamily,
    pub system_text: String,
    pub user_text: String,
    pub allowed_parties: Vec<String>,
    pub allowed_states: Vec<String>,
    pub sentiment_range: (f64, f64),
}

const LLAMA2_SYSTEM: &str = include_str!("../assets/templates/llama2.system.txt");
const LLAMA2_USER: &str = include_str!("../assets/templates/llama2.user.txt");
const ZEPHYR_SYSTEM: &str = include_str!("../assets/templates/zephyr.system.txt");
const ZEPHYR_USER: &str = include_str!("../assets/templates/zephyr.user.txt");

fn default_parties() -> Vec<String> {
    ["BJP", "INC", "AAP", "SAD", "SP", "BSP"].map(String::from).to_vec()
}

fn default_states() -> Vec<String> {
    ["Uttar Pradesh", "Punjab"].map(String::from).to_vec()
}

impl PromptTemplate {
    pub fn new(
        family: ChatFamily,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        allowed_parties: Vec<String>,
        allowed_states: Vec<String>,
    ) -> Result<Self, PromptError> {
        let t = PromptTemplate {
            family,
            system_text: system_text.into(),
            user_text: user_text.into(),
            allowed_parties,
            allowed_states,
            sentiment_range: SENTIMENT_RANGE,
        };
        t.validate()?;
        Ok(t)
    }

    /// The template shipped with the crate for `family`.
    pub fn builtin(family: ChatFamily) -> Self {
        let (system, user) = match family {
            ChatFamily::Llama2Chat => (LLAMA2_SYSTEM, LLAMA2_USER),
            ChatFamily::ZephyrChat => (ZEPHYR_SYSTEM, ZEPHYR_USER),
        };
        PromptTemplate::new(family, system, user, default_parties(), default_states()).expect("bundled template is valid")
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let n = self.user_text.matches(TWEET_PLACEHOLDER).count();
        if n != 1 {
            return Err(PromptError::Placeholder(n));
        }
        if self.allowed_parties.is_empty() {
            return Err(PromptError::EmptyUniverse(self.family.to_string(), "parties"));
        }
        if self.allowed_states.is_empty() {
            return Err(PromptError::EmptyUniverse(self.family.to_string(), "states"));
        }
        Ok(())
    }

    /// The wrapped template with the placeholder still in place.
    pub fn skeleton(&self) -> String {
        self.family.wrap(&self.system_text, &self.user_text)
    }
}

/// Render the prompt for one post.
///
/// The post is inserted verbatim at the template's single placeholder, so a
/// post that itself contains `{tweet}` is not expanded again.
pub fn render(template: &PromptTemplate, tweet_text: &str) -> Result<String, PromptError> {
    if tweet_text.is_empty() {
        return Err(PromptError::EmptyTweet);
    }
    let (head, tail) = template
        .user_text
        .split_once(TWEET_PLACEHOLDER)
        .ok_or(PromptError::Placeholder(0))?;
    let mut user = String::with_capacity(template.user_text.len() + tweet_text.len());
    user.push_str(head);
    user.push_str(tweet_text);
    user.push_str(tail);
    Ok(template.family.wrap(&template.system_text, &user))
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    family: ChatFamily,
    system: String,
    user: String,
    allowed_parties: Vec<String>,
    allowed_states: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    template: Vec<ManifestEntry>,
}

/// Load every template listed in a manifest; asset paths resolve relative to it.
pub fn load_manifest(path: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    let p = path.display().to_string();
    let raw = fs::read_to_string(path).map_err(|source| PromptError::Io { path: p.clone(), source })?;
    let manifest: Manifest = toml::from_str(&raw).map_err(|e| PromptError::Manifest { path: p.clone(), reason: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .template
        .into_iter()
        .map(|e| {
            let read = |name: &str| {
                let asset = base.join(name);
                fs::read_to_string(&asset).map_err(|source| PromptError::Io { path: asset.display().to_string(), source })
            };
            PromptTemplate::new(e.family, read(&e.system)?, read(&e.user)?, e.allowed_parties, e.allowed_states)
        })
        .collect()
}

pub fn template_for(templates: &[PromptTemplate], family: ChatFamily) -> Result<&PromptTemplate, PromptError> {
    templates.iter().find(|t| t.family == family).ok_or_else(|| PromptError::MissingFamily(family.to_string()))
}
