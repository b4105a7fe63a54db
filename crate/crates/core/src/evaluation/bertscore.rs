//! Greedy maximum-cosine token matching (BERTScore F1) over a pluggable
//! embedding provider. No IDF weighting and no baseline rescaling.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::text::metric_tokens;

use super::EvalError;

#[derive(Debug, Clone, PartialEq)]
pub enum Vector {
    Dense(Vec<f64>),
    /// A unit basis vector identified by its index.
    OneHot(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub token: String,
    pub vector: Vector,
}

pub fn cosine(a: &Vector, b: &Vector) -> f64 {
    match (a, b) {
        (Vector::OneHot(x), Vector::OneHot(y)) => {
            if x == y {
                1.0
            } else {
                0.0
            }
        }
        (Vector::Dense(x), Vector::Dense(y)) => {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                (dot / (nx * ny)).clamp(-1.0, 1.0)
            }
        }
        _ => 0.0,
    }
}

/// Contextual token encoder behind the free-text metric. Must be
/// deterministic for benchmark runs.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded in reports.
    fn id(&self) -> String;

    fn embed(&self, text: &str) -> Result<Vec<TokenEmbedding>, EvalError>;
}

/// Maps each distinct normalized token to its own basis vector. Repeated
/// tokens are collapsed, so scores reduce to set overlap.
#[derive(Debug, Clone, Copy, Default)]
pub struct OneHotProvider;

impl EmbeddingProvider for OneHotProvider {
    fn id(&self) -> String {
        "one-hot".to_string()
    }

    fn embed(&self, text: &str) -> Result<Vec<TokenEmbedding>, EvalError> {
        let mut seen = std::collections::HashSet::new();
        Ok(metric_tokens(text)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .map(|token| TokenEmbedding {
                vector: Vector::OneHot(fnv1a(token.as_bytes())),
                token,
            })
            .collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    tokens: Vec<Vec<String>>,
    vectors: Vec<Vec<Vec<f64>>>,
}

/// Remote encoder: `POST {texts: [...]}` returning `{tokens, vectors}`.
pub struct HttpEmbeddingProvider {
    url: String,
    model_id: String,
    http: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, model_id: impl Into<String>, timeout: Duration) -> Result<Self, EvalError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EvalError::ProviderUnavailable(e.to_string()))?;
        Ok(HttpEmbeddingProvider {
            url: url.into(),
            model_id: model_id.into(),
            http,
        })
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<TokenEmbedding>>, EvalError> {
        let unavailable = |e: String| EvalError::ProviderUnavailable(e);
        let resp = self
            .http
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("embedding service returned {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        if body.tokens.len() != texts.len() || body.vectors.len() != texts.len() {
            return Err(unavailable("response length does not match request".into()));
        }
        body.tokens
            .into_iter()
            .zip(body.vectors)
            .map(|(tokens, vectors)| {
                if tokens.len() != vectors.len() {
                    return Err(unavailable("token and vector counts differ".into()));
                }
                Ok(tokens
                    .into_iter()
                    .zip(vectors)
                    .map(|(token, v)| TokenEmbedding { token, vector: Vector::Dense(v) })
                    .collect())
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model_id)
    }

    fn embed(&self, text: &str) -> Result<Vec<TokenEmbedding>, EvalError> {
        Ok(self.embed_batch(&[text])?.pop().unwrap_or_default())
    }
}

/// Precision, recall and F1 of one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn bertscore(candidate: &str, reference: &str, provider: &dyn EmbeddingProvider) -> Result<BertScore, EvalError> {
    if candidate.trim().is_empty() || reference.trim().is_empty() {
        return Err(EvalError::EmptyText);
    }
    let cand = provider.embed(candidate)?;
    let refs = provider.embed(reference)?;
    if cand.is_empty() || refs.is_empty() {
        return Err(EvalError::EmptyText);
    }
    let sim: Vec<Vec<f64>> = cand
        .iter()
        .map(|c| refs.iter().map(|r| cosine(&c.vector, &r.vector)).collect())
        .collect();
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..refs.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / refs.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BertScore { precision, recall, f1 })
}

pub fn bertscore_f1(candidate: &str, reference: &str, provider: &dyn EmbeddingProvider) -> Result<f64, EvalError> {
    bertscore(candidate, reference, provider).map(|s| s.f1)
}
