//! HTTP JSON API over the extraction pipeline, backed by a file-per-record
//! store and a bounded worker queue.

pub mod api;
pub mod error;
pub mod jobs;
pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use paperq_core::cache::ResponseCache;
use paperq_core::config::Config;
use paperq_core::ingest::{ingest_bytes, SourceDocument};
use paperq_core::llm_client::LlmClient;
use paperq_core::pipeline::Extractor;
use paperq_core::registry::{load_question_set, QuestionSet, Registry, RegistryError};
use tower_http::catch_panic::CatchPanicLayer;

use crate::api::{question_set_key, AppState};
use crate::error::ApiError;
use crate::jobs::{start_workers, Core, DocMap, DOCUMENTS, QUESTION_SETS, QUEUE_CAPACITY};
use crate::store::{valid_id, Store};

pub const TOKEN_ENV: &str = "PAPERQ_API_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("API token is empty")]
    EmptyToken,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    QuestionSet { path: PathBuf, source: RegistryError },
    #[error("seed document {path}: {message}")]
    Seed { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StartupError {
    StartupError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// A configured service: store opened, documents and question sets loaded,
/// workers running.
pub struct Service {
    state: AppState,
}

impl Service {
    /// Must be called outside an async runtime; the LLM client is blocking.
    pub fn new(config: Config, token: impl Into<String>) -> Result<Self, StartupError> {
        let token: String = token.into();
        if token.is_empty() {
            return Err(StartupError::EmptyToken);
        }
        let store = Store::open(&config.data_dir).map_err(|e| io_err(&config.data_dir, e))?;
        let cache_dir = config.cache_dir.clone().unwrap_or_else(|| config.data_dir.join("cache"));
        let cache = ResponseCache::open(&cache_dir).map_err(|e| io_err(&cache_dir, e))?;
        let provider = config.embedding_provider().map_err(|e| StartupError::Config(e.to_string()))?;
        let extractor = Extractor::new(LlmClient::new().with_retry(config.retry_policy()))
            .with_cache(cache)
            .with_alignment(config.align_config());

        let docs = DocMap::default();
        for doc in store.list::<SourceDocument>(DOCUMENTS) {
            docs.insert(Arc::new(doc));
        }
        if let Some(dir) = &config.seed_documents {
            seed_documents(dir, &store, &docs)?;
        }
        let registry = Registry::new();
        load_question_sets(&config.question_sets, &store, &registry, &docs)?;

        let workers = config.workers;
        let core = Arc::new(Core {
            config,
            store,
            registry,
            docs,
            extractor,
            provider,
        });
        let (tx, rx) = crossbeam_channel::bounded(QUEUE_CAPACITY);
        start_workers(&core, rx, workers).map_err(|e| StartupError::Config(format!("cannot start workers: {e}")))?;
        core.recover(&tx);
        Ok(Service {
            state: AppState {
                core,
                queue: tx,
                token: token.into(),
            },
        })
    }

    pub fn core(&self) -> &Arc<Core> {
        &self.state.core
    }

    pub fn router(&self) -> Router {
        let state = self.state.clone();
        let protected = Router::new()
            .route("/documents", post(api::upload_document))
            .route("/documents/{doc_id}", get(api::get_document))
            .route("/question-sets", get(api::list_question_sets).post(api::create_question_set))
            .route("/question-sets/{set_id}", get(api::get_question_set))
            .route("/jobs", post(api::create_job))
            .route("/jobs/{job_id}", get(api::get_job))
            .route("/gold-files", post(api::upload_gold))
            .route("/gold-files/{gold_file_id}", get(api::get_gold))
            .route("/benchmarks", post(api::create_benchmark))
            .route("/benchmarks/{benchmark_id}", get(api::get_benchmark))
            .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
        Router::new()
            .route("/health", get(api::health))
            .merge(protected)
            .fallback(api::not_found)
            .method_not_allowed_fallback(api::method_not_allowed)
            .layer(DefaultBodyLimit::max(state.core.config.max_upload_bytes))
            .layer(CatchPanicLayer::custom(|_| {
                ApiError::internal("internal error").into_response()
            }))
            .with_state(state)
    }
}

/// Ingests every `.txt` and `.pdf` in `dir` under its file stem, skipping
/// ids already stored.
fn seed_documents(dir: &Path, store: &Store, docs: &DocMap) -> Result<(), StartupError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("txt") | Some("pdf")) {
            continue;
        }
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !valid_id(&id) {
            return Err(StartupError::Seed {
                path,
                message: "file stem is not a valid document id".into(),
            });
        }
        if docs.contains(&id) {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let doc = ingest_bytes(&bytes, &id)
            .map_err(|e| StartupError::Seed {
                path: path.clone(),
                message: format!("{} ({e})", e.code()),
            })?
            .with_filename(name);
        store.put(DOCUMENTS, &id, &doc).map_err(|e| io_err(&path, e))?;
        docs.insert(Arc::new(doc));
    }
    Ok(())
}

/// Restores stored question sets, then loads the configured files. A
/// configured file whose version is already stored with identical content
/// is skipped.
fn load_question_sets(paths: &[PathBuf], store: &Store, registry: &Registry, docs: &DocMap) -> Result<(), StartupError> {
    let mut stored: Vec<QuestionSet> = store.list(QUESTION_SETS);
    stored.sort_by(|a, b| (&a.set_id, a.version).cmp(&(&b.set_id, b.version)));
    let mut known: HashMap<(String, u32), QuestionSet> = HashMap::new();
    for set in stored {
        let key = (set.set_id.clone(), set.version);
        match registry.insert(set.clone()) {
            Ok(_) => {
                known.insert(key, set);
            }
            Err(e) => tracing::warn!(set_id = %key.0, version = key.1, error = %e, "skipping stored question set"),
        }
    }
    for path in paths {
        let source = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let set = load_question_set(&source).map_err(|source| StartupError::QuestionSet {
            path: path.clone(),
            source,
        })?;
        if known.get(&(set.set_id.clone(), set.version)) == Some(&set) {
            continue;
        }
        set.check_example_refs(|r| docs.contains(r))
            .map_err(|source| StartupError::QuestionSet {
                path: path.clone(),
                source,
            })?;
        let key = question_set_key(&set);
        if !valid_id(&key) {
            return Err(StartupError::Config(format!("{}: set_id is not a valid store id", path.display())));
        }
        let set = registry.insert(set).map_err(|source| StartupError::QuestionSet {
            path: path.clone(),
            source,
        })?;
        store.put(QUESTION_SETS, &key, &*set).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    match presented {
        Some(t) if constant_time_eq(t.as_bytes(), state.token.as_bytes()) => next.run(req).await,
        _ => ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or invalid bearer token").into_response(),
    }
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// A service running on its own runtime thread; stops on drop.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
    service: Service,
}

impl BackgroundServer {
    pub fn start(service: Service, addr: SocketAddr) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let router = service.router();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("paperq-http".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                if let Err(e) = serve(listener, router, async {
                    let _ = rx.await;
                })
                .await
                {
                    tracing::error!(error = %e, "server stopped");
                }
            });
        })?;
        Ok(BackgroundServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
            service,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn service(&self) -> &Service {
        &self.service
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_comparison() {
        assert!(constant_time_eq(b"secret", b"secret"));
        assert!(!constant_time_eq(b"secret", b"secreT"));
        assert!(!constant_time_eq(b"secret", b"secret2"));
        assert!(!constant_time_eq(b"", b"x"));
    }
}
