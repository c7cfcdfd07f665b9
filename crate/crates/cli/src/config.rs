//! Layered configuration: TOML file, then `RAGKIT_<SECTION>_<KEY>`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ragkit_core::diagnostics::{DEFAULT_GRID_SIZE, DEFAULT_THRESHOLD_WORDS, DEFAULT_VALLEY_RATIO};
use ragkit_core::embedding::{
    EmbeddingProvider, HttpEmbeddingConfig, HttpEmbeddingProvider, ReferenceEmbedder, REFERENCE_DIM,
};
use ragkit_core::generation::{
    CannedStub, ChatProvider, EchoMode, EchoStub, HttpChatConfig, HttpChatProvider,
};
use ragkit_core::index::Index;
use ragkit_core::retrieval::DEFAULT_K;

pub const DEFAULT_CONFIG_FILE: &str = "ragkit.toml";
const ENV_PREFIX: &str = "RAGKIT_";
const SECTIONS: [&str; 4] = ["embedding", "chat", "defaults", "paths"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    Reference,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbeddingKind,
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Reference,
            endpoint: String::new(),
            model: String::new(),
            dim: REFERENCE_DIM,
            timeout_secs: 30,
            max_retries: 3,
            batch_size: 32,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatKind {
    /// Echoes the context sentence with the most query-word overlap.
    Echo,
    /// Echoes the first sentence of the first context.
    EchoFirst,
    /// Canned answers keyed by query, echo fallback.
    Canned,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSection {
    pub kind: ChatKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_context_tokens: Option<usize>,
    pub canned: Option<PathBuf>,
}

impl Default for ChatSection {
    fn default() -> Self {
        Self {
            kind: ChatKind::Echo,
            endpoint: String::new(),
            model: String::new(),
            temperature: 0.0,
            timeout_secs: 120,
            max_retries: 2,
            max_context_tokens: None,
            canned: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefaultsSection {
    pub k: usize,
    pub threshold_words: usize,
    pub grid_size: usize,
    pub valley_ratio: f64,
}

impl Default for DefaultsSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            threshold_words: DEFAULT_THRESHOLD_WORDS,
            grid_size: DEFAULT_GRID_SIZE,
            valley_ratio: DEFAULT_VALLEY_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            corpus: "corpus.json".into(),
            index: "index.bin".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub embedding: EmbeddingSection,
    pub chat: ChatSection,
    pub defaults: DefaultsSection,
    pub paths: PathsSection,
}

/// Parses an override value as a TOML literal, falling back to a string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl Config {
    /// Loads `path` (or `ragkit.toml` if present) and applies environment
    /// overrides from `vars`.
    pub fn load(
        path: Option<&Path>,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None if Path::new(DEFAULT_CONFIG_FILE).exists() => {
                std::fs::read_to_string(DEFAULT_CONFIG_FILE)?
                    .parse::<toml::Table>()
                    .with_context(|| format!("parsing {DEFAULT_CONFIG_FILE}"))?
            }
            None => toml::Table::new(),
        };

        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (name, raw) in overrides {
            let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
            let Some(section) = SECTIONS.iter().find(|s| rest.starts_with(&format!("{s}_"))) else {
                continue;
            };
            let key = &rest[section.len() + 1..];
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(t) = entry.as_table_mut() else {
                bail!("`{section}` must be a table");
            };
            let value = match (key, env_value(&raw)) {
                ("endpoint" | "model" | "kind" | "canned" | "corpus" | "index" | "reports", _) => {
                    toml::Value::String(raw.clone())
                }
                (_, v) => v,
            };
            t.insert(key.to_string(), value);
        }

        let config: Config = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding.dim == 0 {
            bail!("embedding.dim must be positive");
        }
        if self.chat.temperature.is_nan() || self.chat.temperature < 0.0 {
            bail!(
                "chat.temperature must be >= 0 (got {})",
                self.chat.temperature
            );
        }
        if self.defaults.k == 0 {
            bail!("defaults.k must be positive");
        }
        Ok(())
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.embedding;
        Ok(match e.kind {
            EmbeddingKind::Reference => Box::new(ReferenceEmbedder::with_dim(e.dim)),
            EmbeddingKind::Http => {
                if e.endpoint.is_empty() {
                    bail!("embedding.endpoint is required for the http provider");
                }
                let mut c = HttpEmbeddingConfig::new(&e.endpoint, &e.model, e.dim);
                c.timeout = Duration::from_secs(e.timeout_secs);
                c.max_retries = e.max_retries;
                c.batch_size = e.batch_size;
                c.max_in_flight = e.max_in_flight;
                Box::new(HttpEmbeddingProvider::new(c)?)
            }
        })
    }

    pub fn chat(&self) -> Result<Box<dyn ChatProvider>> {
        let c = &self.chat;
        Ok(match c.kind {
            ChatKind::Echo => Box::new(EchoStub::new(EchoMode::BestOverlap)),
            ChatKind::EchoFirst => Box::new(EchoStub::new(EchoMode::FirstSentence)),
            ChatKind::Canned => {
                let path = c
                    .canned
                    .as_ref()
                    .context("chat.canned is required for the canned provider")?;
                Box::new(CannedStub::from_jsonl(
                    path,
                    Some(EchoStub::new(EchoMode::BestOverlap)),
                )?)
            }
            ChatKind::Http => {
                if c.endpoint.is_empty() {
                    bail!("chat.endpoint is required for the http provider");
                }
                let mut h = HttpChatConfig::new(&c.endpoint, &c.model);
                h.temperature = c.temperature;
                h.timeout = Duration::from_secs(c.timeout_secs);
                h.max_retries = c.max_retries;
                h.max_context_tokens = c.max_context_tokens;
                Box::new(HttpChatProvider::new(h)?)
            }
        })
    }
}

/// Rejects an index built with a different provider or dimension.
pub fn check_index(index: &Index, embedder: &dyn EmbeddingProvider) -> Result<()> {
    if index.dim() != embedder.dim() {
        bail!(
            "index dimension {} does not match the configured embedding dimension {}",
            index.dim(),
            embedder.dim()
        );
    }
    if index.provider_id() != embedder.provider_id() {
        bail!(
            "index was built with provider `{}` but `{}` is configured",
            index.provider_id(),
            embedder.provider_id()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults_without_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.toml");
        std::fs::write(&path, "").unwrap();
        let c = Config::load(Some(&path), vec![]).unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.defaults.k, 3);
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[defaults]\nk = 5\n[embedding]\ndim = 64\nmodel = \"m\"\n",
        )
        .unwrap();
        let c = Config::load(
            Some(&path),
            vars(&[
                ("RAGKIT_DEFAULTS_K", "7"),
                ("RAGKIT_EMBEDDING_MODEL", "123"),
                ("RAGKIT_CHAT_TEMPERATURE", "0.5"),
                ("RAGKIT_UNRELATED", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(c.defaults.k, 7);
        assert_eq!(c.embedding.dim, 64);
        assert_eq!(c.embedding.model, "123");
        assert_eq!(c.chat.temperature, 0.5);
    }

    #[test]
    fn invalid_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[chat]\ntemperature = -1.0\n").unwrap();
        assert!(Config::load(Some(&path), vec![]).is_err());
        std::fs::write(&path, "[chat]\ntemprature = 1.0\n").unwrap();
        assert!(Config::load(Some(&path), vec![]).is_err());
    }
}
