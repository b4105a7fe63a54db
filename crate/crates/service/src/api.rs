//! Route handlers.

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::QueryRejection;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::header::{CONTENT_LENGTH, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::Json;
use chrono::Utc;
use crossbeam_channel::{Sender, TrySendError};
use paperq_core::evaluation::parse_gold_jsonl;
use paperq_core::ingest::{ingest_bytes, SourceDocument};
use paperq_core::pipeline::DocumentSource;
use paperq_core::registry::{load_question_set, QuestionSet, RegistryError};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::error::ApiError;
use crate::jobs::{
    Benchmark, Core, ExtractionJob, GoldFile, Status, Task, BENCHMARKS, DOCUMENTS, GOLD, JOBS, QUESTION_SETS,
};
use crate::store::valid_id;

#[derive(Clone)]
pub struct AppState {
    pub core: Arc<Core>,
    pub queue: Sender<Task>,
    pub token: Arc<str>,
}

type ApiResult = Result<axum::response::Response, ApiError>;

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn too_large(limit: usize) -> ApiError {
    ApiError::new(
        StatusCode::PAYLOAD_TOO_LARGE,
        "PAYLOAD_TOO_LARGE",
        format!("body exceeds the {limit}-byte limit"),
    )
}

fn is_length_limit(e: &axum::Error) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(e);
    while let Some(err) = cur {
        if err.is::<http_body_util::LengthLimitError>() {
            return true;
        }
        cur = err.source();
    }
    false
}

async fn read_body(req: Request, limit: usize) -> Result<(Parts, Bytes), ApiError> {
    let (parts, body) = req.into_parts();
    let declared = parts
        .headers
        .get(CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit as u64) {
        return Err(too_large(limit));
    }
    let bytes = axum::body::to_bytes(body, limit).await.map_err(|e| {
        if is_length_limit(&e) {
            too_large(limit)
        } else {
            ApiError::bad_request("INVALID_BODY", format!("cannot read body: {e}"))
        }
    })?;
    Ok((parts, bytes))
}

/// Body of a raw upload or the `file` field of a multipart form, with the
/// client-supplied file name if any.
async fn read_upload(req: Request, limit: usize) -> Result<(Bytes, Option<String>), ApiError> {
    let multipart = req
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.to_ascii_lowercase().starts_with("multipart/form-data"));
    let (parts, bytes) = read_body(req, limit).await?;
    if !multipart {
        return Ok((bytes, None));
    }
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::bad_request("INVALID_MULTIPART", e.body_text());
    let mut form = Multipart::from_request(Request::from_parts(parts, Body::from(bytes)), &())
        .await
        .map_err(|e| ApiError::bad_request("INVALID_MULTIPART", e.body_text()))?;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        if field.name() == Some("file") {
            let name = field.file_name().map(str::to_string);
            return Ok((field.bytes().await.map_err(bad)?, name));
        }
    }
    Err(ApiError::bad_request("MISSING_FILE_FIELD", "multipart body has no \"file\" field"))
}

async fn read_json<T: DeserializeOwned>(req: Request, limit: usize) -> Result<T, ApiError> {
    let (_, bytes) = read_body(req, limit).await?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        ApiError::unprocessable("INVALID_REQUEST", format!("{}: {}", e.path(), e.inner()))
    })?;
    de.end()
        .map_err(|e| ApiError::unprocessable("INVALID_REQUEST", format!("trailing data: {e}")))?;
    Ok(value)
}

fn registry_error(e: RegistryError) -> ApiError {
    let status = match e {
        RegistryError::NotFound(_) => StatusCode::NOT_FOUND,
        RegistryError::StaleVersion { .. } => StatusCode::CONFLICT,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    ApiError::new(status, e.code(), e.to_string())
}

fn enqueue(state: &AppState, task: Task) -> Result<(), ApiError> {
    match state.queue.try_send(task) {
        Ok(()) => Ok(()),
        Err(TrySendError::Full(task) | TrySendError::Disconnected(task)) => {
            let err = ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "QUEUE_FULL", "work queue is full, retry later");
            state.core.fail(&task, err.body.clone());
            Err(err)
        }
    }
}

pub async fn health() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "ROUTE_NOT_FOUND", "no such route")
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED", "method not allowed on this route")
}

pub async fn upload_document(State(state): State<AppState>, req: Request) -> ApiResult {
    let (bytes, filename) = read_upload(req, state.core.config.max_upload_bytes).await?;
    if bytes.is_empty() {
        return Err(ApiError::bad_request("EMPTY_BODY", "request body is empty"));
    }
    let doc_id = new_id();
    let id = doc_id.clone();
    let ingested = tokio::task::spawn_blocking(move || ingest_bytes(&bytes, &id))
        .await
        .map_err(|_| ApiError::internal("ingestion aborted"))?;
    let mut doc = ingested.map_err(|e| ApiError::bad_request(e.code(), e.to_string()))?;
    if let Some(name) = filename {
        doc = doc.with_filename(name);
    }
    state
        .core
        .store
        .put(DOCUMENTS, &doc_id, &doc)
        .map_err(|e| ApiError::internal(format!("cannot persist document: {e}")))?;
    let body = json!({
        "doc_id": doc.doc_id,
        "title": doc.title,
        "char_len": doc.char_len(),
        "page_count": doc.pages.len(),
        "source_filename": doc.ingest_meta.source_filename,
    });
    state.core.docs.insert(Arc::new(doc));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

pub async fn get_document(State(state): State<AppState>, Path(doc_id): Path<String>) -> ApiResult {
    let doc: Arc<SourceDocument> = state
        .core
        .docs
        .document(&doc_id)
        .ok_or_else(|| ApiError::not_found("DOCUMENT_NOT_FOUND", format!("document {doc_id:?}")))?;
    Ok(Json(&*doc).into_response())
}

pub async fn list_question_sets(State(state): State<AppState>) -> ApiResult {
    Ok(Json(state.core.registry.list()).into_response())
}

#[derive(Deserialize)]
pub struct VersionQuery {
    version: Option<u32>,
}

pub async fn get_question_set(
    State(state): State<AppState>,
    Path(set_id): Path<String>,
    query: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = query.map_err(|e| ApiError::bad_request("INVALID_QUERY", e.body_text()))?;
    let set = state.core.registry.get_set(&set_id, q.version).map_err(registry_error)?;
    Ok(Json(&*set).into_response())
}

pub async fn create_question_set(State(state): State<AppState>, req: Request) -> ApiResult {
    let (_, bytes) = read_body(req, state.core.config.max_upload_bytes).await?;
    let source = std::str::from_utf8(&bytes).map_err(|_| ApiError::unprocessable("INVALID_REQUEST", "body is not UTF-8"))?;
    let set = load_question_set(source).map_err(registry_error)?;
    let key = question_set_key(&set);
    if !valid_id(&key) {
        return Err(ApiError::unprocessable(
            "INVALID_SET_ID",
            "set_id may contain only ASCII letters, digits, '-', '_' and '.'",
        ));
    }
    set.check_example_refs(|r| state.core.docs.contains(r)).map_err(registry_error)?;
    let set = state.core.registry.insert(set).map_err(registry_error)?;
    state
        .core
        .store
        .put(QUESTION_SETS, &key, &*set)
        .map_err(|e| ApiError::internal(format!("cannot persist question set: {e}")))?;
    Ok((StatusCode::CREATED, Json(set.summary())).into_response())
}

pub fn question_set_key(set: &QuestionSet) -> String {
    format!("{}.v{}", set.set_id, set.version)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    doc_id: String,
    #[serde(default)]
    set_id: Option<String>,
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    target_ids: Option<Vec<String>>,
    #[serde(default)]
    custom_question: Option<String>,
    endpoint_name: String,
    #[serde(default)]
    shot_mode: usize,
}

pub async fn create_job(State(state): State<AppState>, req: Request) -> ApiResult {
    let body: JobRequest = read_json(req, state.core.config.max_upload_bytes).await?;
    let core = &state.core;
    if let Some(q) = &body.custom_question {
        if body.shot_mode > 0 {
            return Err(ApiError::unprocessable(
                "INVALID_SHOT_MODE",
                "custom questions have no examples and run zero-shot only",
            ));
        }
        if q.trim().is_empty() {
            return Err(ApiError::unprocessable("INVALID_REQUEST", "custom_question is empty"));
        }
        if body.target_ids.as_ref().is_some_and(|t| !t.is_empty()) {
            return Err(ApiError::unprocessable(
                "INVALID_REQUEST",
                "give either target_ids or custom_question, not both",
            ));
        }
    }
    if core.config.endpoint(&body.endpoint_name).is_none() {
        return Err(ApiError::not_found("UNKNOWN_ENDPOINT", format!("endpoint {:?}", body.endpoint_name)));
    }
    if !core.docs.contains(&body.doc_id) {
        return Err(ApiError::not_found("DOCUMENT_NOT_FOUND", format!("document {:?}", body.doc_id)));
    }

    let (target_ids, version) = match (&body.custom_question, &body.set_id) {
        (Some(_), _) => (vec!["custom".to_string()], None),
        (None, None) => {
            return Err(ApiError::unprocessable(
                "INVALID_REQUEST",
                "set_id is required unless custom_question is given",
            ))
        }
        (None, Some(set_id)) => {
            let set = core.registry.get_set(set_id, body.version).map_err(registry_error)?;
            let ids = match &body.target_ids {
                Some(ids) if ids.is_empty() => {
                    return Err(ApiError::unprocessable("INVALID_REQUEST", "target_ids is empty"))
                }
                Some(ids) => ids.clone(),
                None => set.targets.iter().map(|t| t.target_id.clone()).collect(),
            };
            for id in &ids {
                let target = set.target(id).ok_or_else(|| {
                    ApiError::not_found("TARGET_NOT_FOUND", format!("target {id:?} in set {set_id:?} v{}", set.version))
                })?;
                if target.examples.len() < body.shot_mode {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "INSUFFICIENT_EXAMPLES",
                        format!(
                            "target {id:?} has {} examples, {}-shot requested",
                            target.examples.len(),
                            body.shot_mode
                        ),
                    ));
                }
            }
            (ids, Some(set.version))
        }
    };

    let job = ExtractionJob {
        job_id: new_id(),
        doc_id: body.doc_id,
        set_id: if body.custom_question.is_some() { None } else { body.set_id },
        version,
        target_ids,
        custom_question: body.custom_question,
        endpoint_name: body.endpoint_name,
        shot_mode: body.shot_mode,
        status: Status::Queued,
        created_at: Utc::now(),
        started_at: None,
        finished_at: None,
        results: Default::default(),
        error: None,
    };
    core.store
        .put(JOBS, &job.job_id, &job)
        .map_err(|e| ApiError::internal(format!("cannot persist job: {e}")))?;
    enqueue(&state, Task::Job(job.job_id.clone()))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job.job_id, "status": job.status }))).into_response())
}

pub async fn get_job(State(state): State<AppState>, Path(job_id): Path<String>) -> ApiResult {
    let job: ExtractionJob = state
        .core
        .store
        .get(JOBS, &job_id)
        .ok_or_else(|| ApiError::not_found("JOB_NOT_FOUND", format!("job {job_id:?}")))?;
    Ok(Json(job).into_response())
}

pub async fn upload_gold(State(state): State<AppState>, req: Request) -> ApiResult {
    let (bytes, filename) = read_upload(req, state.core.config.max_upload_bytes).await?;
    let source = std::str::from_utf8(&bytes).map_err(|_| ApiError::unprocessable("GOLD_SCHEMA", "gold file is not UTF-8"))?;
    let annotations = parse_gold_jsonl(source).map_err(|e| ApiError::unprocessable("GOLD_SCHEMA", e.to_string()))?;
    let gold = GoldFile {
        gold_file_id: new_id(),
        filename,
        created_at: Utc::now(),
        annotations,
    };
    state
        .core
        .store
        .put(GOLD, &gold.gold_file_id, &gold)
        .map_err(|e| ApiError::internal(format!("cannot persist gold file: {e}")))?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "gold_file_id": gold.gold_file_id, "annotations": gold.annotations.len() })),
    )
        .into_response())
}

pub async fn get_gold(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let gold: GoldFile = state
        .core
        .store
        .get(GOLD, &id)
        .ok_or_else(|| ApiError::not_found("GOLD_FILE_NOT_FOUND", format!("gold file {id:?}")))?;
    Ok(Json(gold).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRequest {
    gold_file_ref: String,
    set_id: String,
    #[serde(default)]
    version: Option<u32>,
    endpoints: Vec<String>,
    shot_modes: Vec<usize>,
}

pub async fn create_benchmark(State(state): State<AppState>, req: Request) -> ApiResult {
    let body: BenchmarkRequest = read_json(req, state.core.config.max_upload_bytes).await?;
    let core = &state.core;
    if body.endpoints.is_empty() || body.shot_modes.is_empty() {
        return Err(ApiError::unprocessable("INVALID_REQUEST", "endpoints and shot_modes must be non-empty"));
    }
    for name in &body.endpoints {
        if core.config.endpoint(name).is_none() {
            return Err(ApiError::not_found("UNKNOWN_ENDPOINT", format!("endpoint {name:?}")));
        }
    }
    let gold: GoldFile = core
        .store
        .get(GOLD, &body.gold_file_ref)
        .ok_or_else(|| ApiError::not_found("GOLD_FILE_NOT_FOUND", format!("gold file {:?}", body.gold_file_ref)))?;
    let set = core.registry.get_set(&body.set_id, body.version).map_err(registry_error)?;
    let max_shots = body.shot_modes.iter().copied().max().unwrap_or(0);
    for g in &gold.annotations {
        let target = set.target(&g.target_id).ok_or_else(|| {
            ApiError::unprocessable(
                "GOLD_MISMATCH",
                format!("gold target {:?} is not in set {:?} v{}", g.target_id, set.set_id, set.version),
            )
        })?;
        if target.kind != g.kind {
            return Err(ApiError::unprocessable(
                "GOLD_MISMATCH",
                format!("gold kind for {:?} is {}, the set says {}", g.target_id, g.kind, target.kind),
            ));
        }
        if target.examples.len() < max_shots {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "INSUFFICIENT_EXAMPLES",
                format!("target {:?} has {} examples, {max_shots}-shot requested", g.target_id, target.examples.len()),
            ));
        }
        if !core.docs.contains(&g.doc_id) {
            return Err(ApiError::not_found("DOCUMENT_NOT_FOUND", format!("gold document {:?}", g.doc_id)));
        }
    }
    let bench = Benchmark {
        benchmark_id: new_id(),
        gold_file_ref: body.gold_file_ref,
        set_id: set.set_id.clone(),
        version: set.version,
        endpoints: body.endpoints,
        shot_modes: body.shot_modes,
        status: Status::Queued,
        created_at: Utc::now(),
        started_at: None,
        finished_at: None,
        reports: Vec::new(),
        table_markdown: None,
        error: None,
    };
    core.store
        .put(BENCHMARKS, &bench.benchmark_id, &bench)
        .map_err(|e| ApiError::internal(format!("cannot persist benchmark: {e}")))?;
    enqueue(&state, Task::Benchmark(bench.benchmark_id.clone()))?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "benchmark_id": bench.benchmark_id, "status": bench.status })),
    )
        .into_response())
}

pub async fn get_benchmark(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let bench: Benchmark = state
        .core
        .store
        .get(BENCHMARKS, &id)
        .ok_or_else(|| ApiError::not_found("BENCHMARK_NOT_FOUND", format!("benchmark {id:?}")))?;
    Ok(Json(bench).into_response())
}
