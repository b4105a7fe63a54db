//! TOML configuration with environment overrides. Secrets never live here:
//! endpoints name the environment variable holding their key.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::alignment::AlignConfig;
use crate::evaluation::{EmbeddingProvider, HttpEmbeddingProvider, OneHotProvider};
use crate::llm_client::{ModelEndpoint, RetryPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentSection {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_spans")]
    pub max_spans: usize,
}

fn default_threshold() -> f64 {
    0.75
}

fn default_max_spans() -> usize {
    5
}

impl Default for AlignmentSection {
    fn default() -> Self {
        AlignmentSection {
            threshold: default_threshold(),
            max_spans: default_max_spans(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    #[serde(default = "default_base_ms")]
    pub base_ms: u64,
    #[serde(default = "default_cap_ms")]
    pub cap_ms: u64,
}

fn default_base_ms() -> u64 {
    1000
}

fn default_cap_ms() -> u64 {
    60_000
}

impl Default for RetrySection {
    fn default() -> Self {
        RetrySection {
            base_ms: default_base_ms(),
            cap_ms: default_cap_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSection {
    #[default]
    OneHot,
    Http {
        url: String,
        model_id: String,
        #[serde(default = "default_embed_timeout")]
        timeout_secs: u64,
    },
}

fn default_embed_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Service job workers.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Concurrent LLM requests per batch.
    #[serde(default = "default_workers")]
    pub parallelism: usize,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: usize,
    #[serde(default)]
    pub question_sets: Vec<PathBuf>,
    /// Documents ingested at service start, keyed by file stem. Few-shot
    /// examples of preloaded question sets refer to these ids.
    #[serde(default)]
    pub seed_documents: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub alignment: AlignmentSection,
    #[serde(default)]
    pub retry: RetrySection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub endpoints: Vec<ModelEndpoint>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("paperq-data")
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_workers() -> usize {
    4
}

fn default_max_upload() -> usize {
    50 * 1024 * 1024
}

impl Default for Config {
    fn default() -> Self {
        Config::from_toml("").expect("empty config is valid")
    }
}

impl Config {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(source);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Parse(format!("{path}: {}", e.inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Config::from_toml(&raw)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
        if let Some(s) = self.seed_documents.as_mut() {
            fix(s);
        }
        self.question_sets.iter_mut().for_each(fix);
    }

    /// Overrides from `PAPERQ_DATA_DIR`, `PAPERQ_CACHE_DIR`, `PAPERQ_BIND`,
    /// `PAPERQ_WORKERS`, `PAPERQ_PARALLELISM` and `PAPERQ_MAX_UPLOAD_BYTES`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let number = |key: &str, raw: String| -> Result<usize, ConfigError> {
            raw.trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{key} must be a non-negative integer, got {raw:?}")))
        };
        if let Some(v) = get("PAPERQ_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get("PAPERQ_CACHE_DIR") {
            self.cache_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("PAPERQ_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("PAPERQ_WORKERS") {
            self.workers = number("PAPERQ_WORKERS", v)?;
        }
        if let Some(v) = get("PAPERQ_PARALLELISM") {
            self.parallelism = number("PAPERQ_PARALLELISM", v)?;
        }
        if let Some(v) = get("PAPERQ_MAX_UPLOAD_BYTES") {
            self.max_upload_bytes = number("PAPERQ_MAX_UPLOAD_BYTES", v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 || self.parallelism == 0 {
            return Err(ConfigError::Invalid("workers and parallelism must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alignment.threshold) {
            return Err(ConfigError::Invalid("alignment.threshold must be in [0, 1]".into()));
        }
        if self.retry.base_ms > self.retry.cap_ms {
            return Err(ConfigError::Invalid("retry.base_ms must not exceed retry.cap_ms".into()));
        }
        let mut names = std::collections::HashSet::new();
        for e in &self.endpoints {
            e.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
            if !names.insert(e.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate endpoint name {:?}", e.name)));
            }
        }
        Ok(())
    }

    pub fn endpoint(&self, name: &str) -> Option<&ModelEndpoint> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            threshold: self.alignment.threshold,
            max_spans: self.alignment.max_spans,
            ..AlignConfig::default()
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_millis(self.retry.base_ms),
            cap: Duration::from_millis(self.retry.cap_ms),
        }
    }

    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        Ok(match &self.embedding {
            EmbeddingSection::OneHot => Box::new(OneHotProvider),
            EmbeddingSection::Http { url, model_id, timeout_secs } => Box::new(
                HttpEmbeddingProvider::new(url.clone(), model_id.clone(), Duration::from_secs(*timeout_secs))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
        })
    }
}
