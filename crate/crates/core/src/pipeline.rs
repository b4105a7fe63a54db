//! Prompt, complete, parse and align for one (document, target) pair, and
//! the models × shot-modes benchmark matrix built on top of it.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::alignment::{align_context_with, AlignConfig};
use crate::cache::{cache_key, ResponseCache};
use crate::evaluation::{run_benchmark, EmbeddingProvider, EvalError, GoldAnnotation, MetricReport};
use crate::ingest::SourceDocument;
use crate::llm_client::{run_bounded, CompletionRecord, LlmClient, LlmError, ModelEndpoint};
use crate::parsing::{parse_model_output, ParsedExtraction};
use crate::prompting::{build_few_shot, fit_to_budget, CharHeuristic, PromptBundle};
use crate::records::{ExtractionRecord, RecordError};
use crate::registry::{ExtractionTarget, QuestionSet};

/// Lookup of ingested documents by id.
pub trait DocumentSource: Send + Sync {
    fn document(&self, doc_id: &str) -> Option<Arc<SourceDocument>>;
}

impl DocumentSource for HashMap<String, Arc<SourceDocument>> {
    fn document(&self, doc_id: &str) -> Option<Arc<SourceDocument>> {
        self.get(doc_id).cloned()
    }
}

/// Runs extractions against one client, optionally through a response
/// cache. Counts the requests that actually reached the network.
pub struct Extractor {
    client: LlmClient,
    cache: Option<ResponseCache>,
    align: AlignConfig,
    estimator: CharHeuristic,
    network_calls: AtomicUsize,
}

/// Outcome of one extraction plus the completion it came from, if any.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub record: ExtractionRecord,
    pub completion: Option<CompletionRecord>,
    pub from_cache: bool,
}

impl Extractor {
    pub fn new(client: LlmClient) -> Self {
        Extractor {
            client,
            cache: None,
            align: AlignConfig::default(),
            estimator: CharHeuristic::default(),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_alignment(mut self, align: AlignConfig) -> Self {
        self.align = align;
        self
    }

    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn prepare(
        &self,
        endpoint: &ModelEndpoint,
        target: &ExtractionTarget,
        doc: &SourceDocument,
        shot_mode: usize,
        docs: &dyn DocumentSource,
    ) -> Result<PromptBundle, RecordError> {
        let bundle = build_few_shot(target, doc, shot_mode, |r| docs.document(r)).map_err(|e| RecordError {
            code: e.code().to_string(),
            message: e.to_string(),
        })?;
        fit_to_budget(&bundle, endpoint.max_context, &self.estimator).map_err(|e| RecordError {
            code: e.code().to_string(),
            message: e.to_string(),
        })
    }

    /// Returns the cached completion for `bundle` or requests and caches a
    /// new one. The flag is true on a cache hit.
    pub fn obtain(&self, endpoint: &ModelEndpoint, bundle: &PromptBundle) -> Result<(CompletionRecord, bool), LlmError> {
        let key = cache_key(endpoint, bundle);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok((hit, true));
        }
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let record = self.client.complete(endpoint, bundle)?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &record) {
                tracing::warn!(error = %e, "response cache write failed");
            }
        }
        Ok((record, false))
    }

    /// Parses and aligns a stored completion. Depends only on its inputs,
    /// so stored completions reproduce the same record.
    pub fn finish(
        &self,
        endpoint_name: &str,
        target: &ExtractionTarget,
        doc: &SourceDocument,
        completion: &CompletionRecord,
    ) -> ExtractionRecord {
        let mut record = ExtractionRecord {
            doc_id: doc.doc_id.clone(),
            target_id: target.target_id.clone(),
            kind: target.kind,
            model: endpoint_name.to_string(),
            shot_mode: completion.shot_mode,
            extraction: None,
            error: None,
            spans: Vec::new(),
            unverifiable: false,
            completion_id: Some(completion.request_id.clone()),
        };
        match parse_model_output(&completion.raw_response_text) {
            Ok(raw) => {
                let parsed = ParsedExtraction::new(raw, target, &doc.doc_id, endpoint_name, completion.shot_mode);
                record.spans = align_context_with(&parsed.context, doc, &self.align).unwrap_or_default();
                record.unverifiable = record.spans.is_empty();
                record.extraction = Some(parsed);
            }
            Err(e) => {
                record.error = Some(RecordError {
                    code: e.code().to_string(),
                    message: e.to_string(),
                })
            }
        }
        record
    }

    pub fn extract_one(
        &self,
        endpoint: &ModelEndpoint,
        target: &ExtractionTarget,
        doc: &SourceDocument,
        shot_mode: usize,
        docs: &dyn DocumentSource,
    ) -> Extraction {
        let failed = |error: RecordError| Extraction {
            record: ExtractionRecord {
                doc_id: doc.doc_id.clone(),
                target_id: target.target_id.clone(),
                kind: target.kind,
                model: endpoint.name.clone(),
                shot_mode,
                extraction: None,
                error: Some(error),
                spans: Vec::new(),
                unverifiable: false,
                completion_id: None,
            },
            completion: None,
            from_cache: false,
        };
        let bundle = match self.prepare(endpoint, target, doc, shot_mode, docs) {
            Ok(b) => b,
            Err(e) => return failed(e),
        };
        match self.obtain(endpoint, &bundle) {
            Ok((completion, from_cache)) => Extraction {
                record: self.finish(&endpoint.name, target, doc, &completion),
                completion: Some(completion),
                from_cache,
            },
            Err(e) => failed(RecordError {
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MatrixError {
    #[error("gold annotation references unknown target {0:?}")]
    UnknownTarget(String),
    #[error("gold annotation references unknown document {0:?}")]
    UnknownDocument(String),
    #[error("gold kind for target {target_id:?} differs from the question set")]
    KindMismatch { target_id: String },
    #[error("no endpoints or shot modes given")]
    EmptyMatrix,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One (endpoint, shot mode) cell of a benchmark run.
#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub endpoint: String,
    pub shot_mode: usize,
    pub records: Vec<ExtractionRecord>,
    pub report: MetricReport,
}

/// Extracts every gold (document, target) pair for each endpoint and shot
/// mode, then scores each cell. Cells are returned in endpoint-major order.
#[allow(clippy::too_many_arguments)]
pub fn run_matrix(
    extractor: &Extractor,
    set: &QuestionSet,
    gold: &[GoldAnnotation],
    docs: &dyn DocumentSource,
    endpoints: &[ModelEndpoint],
    shot_modes: &[usize],
    parallelism: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<MatrixCell>, MatrixError> {
    if endpoints.is_empty() || shot_modes.is_empty() {
        return Err(MatrixError::EmptyMatrix);
    }
    let mut pairs: Vec<(&ExtractionTarget, Arc<SourceDocument>)> = Vec::with_capacity(gold.len());
    for g in gold {
        let target = set
            .target(&g.target_id)
            .ok_or_else(|| MatrixError::UnknownTarget(g.target_id.clone()))?;
        if target.kind != g.kind {
            return Err(MatrixError::KindMismatch { target_id: g.target_id.clone() });
        }
        let doc = docs
            .document(&g.doc_id)
            .ok_or_else(|| MatrixError::UnknownDocument(g.doc_id.clone()))?;
        pairs.push((target, doc));
    }
    let mut cells = Vec::new();
    for endpoint in endpoints {
        for &k in shot_modes {
            let records: Vec<ExtractionRecord> = run_bounded(&pairs, parallelism, |(target, doc)| {
                extractor.extract_one(endpoint, target, doc, k, docs).record
            });
            let report = run_benchmark(gold, &records, provider, &endpoint.name, k)?;
            cells.push(MatrixCell {
                endpoint: endpoint.name.clone(),
                shot_mode: k,
                records,
                report,
            });
        }
    }
    Ok(cells)
}
