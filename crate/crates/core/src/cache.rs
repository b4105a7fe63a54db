//! On-disk cache of completion records keyed by request content.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::llm_client::{CompletionRecord, ModelEndpoint};
use crate::prompting::{ChatMessage, PromptBundle};

#[derive(Serialize)]
struct CacheKey<'a> {
    endpoint: &'a str,
    model: &'a str,
    temperature: f64,
    max_output_tokens: Option<u32>,
    messages: &'a [ChatMessage],
}

/// Hex SHA-256 of everything that determines a completion request.
pub fn cache_key(endpoint: &ModelEndpoint, bundle: &PromptBundle) -> String {
    let key = CacheKey {
        endpoint: &endpoint.name,
        model: endpoint.model_id(),
        temperature: endpoint.temperature,
        max_output_tokens: endpoint.max_output_tokens,
        messages: &bundle.messages,
    };
    let bytes = serde_json::to_vec(&key).expect("cache key serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One JSON file per record, written atomically.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(ResponseCache { dir: dir.as_ref().to_path_buf() })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        let bytes = fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, key: &str, record: &CompletionRecord) -> std::io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&serde_json::to_vec_pretty(record).expect("record serializes"))?;
        tmp.persist(self.path(key)).map_err(|e| e.error)?;
        Ok(())
    }
}
