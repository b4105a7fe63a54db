//! In-process mock of an OpenAI-compatible chat-completions server, for
//! tests. Replies come from a scripted queue first, then from a responder
//! closure. Records every request and the peak number in flight.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub mod scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockMessage {
    pub role: String,
    pub content: String,
}

/// What the server saw for one chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRequest {
    pub model: String,
    pub messages: Vec<MockMessage>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(skip)]
    pub authorization: Option<String>,
}

impl MockRequest {
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub status: u16,
    pub body: String,
}

impl MockReply {
    /// A 200 completion whose assistant content is `text`.
    pub fn content(text: &str) -> Self {
        let body = json!({
            "id": "mock-completion",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
        });
        MockReply { status: 200, body: body.to_string() }
    }

    pub fn status(status: u16, body: &str) -> Self {
        MockReply { status, body: body.to_string() }
    }
}

pub type Responder = Arc<dyn Fn(&MockRequest) -> MockReply + Send + Sync>;

struct Shared {
    responder: Responder,
    script: Mutex<VecDeque<MockReply>>,
    requests: Mutex<Vec<MockRequest>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    latency_ms: AtomicUsize,
    embed_calls: AtomicUsize,
}

/// Running mock server. Shuts down on drop.
pub struct MockLlm {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockLlm {
    pub fn start(responder: impl Fn(&MockRequest) -> MockReply + Send + Sync + 'static) -> Self {
        Self::start_on("127.0.0.1:0".parse().expect("valid addr"), Arc::new(responder))
            .expect("mock server binds")
    }

    /// Replies with the last user message verbatim.
    pub fn echo() -> Self {
        Self::start(|req| MockReply::content(req.last_user()))
    }

    pub fn start_on(addr: SocketAddr, responder: Responder) -> std::io::Result<Self> {
        let shared = Arc::new(Shared {
            responder,
            script: Mutex::new(VecDeque::new()),
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            latency_ms: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
        });
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let bound = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(shared.clone());
        let thread = std::thread::Builder::new().name("mock-llm".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
        Ok(MockLlm {
            addr: bound,
            shared,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Queues replies served before the responder is consulted.
    pub fn push_script(&self, replies: impl IntoIterator<Item = MockReply>) {
        self.shared.script.lock().unwrap().extend(replies);
    }

    pub fn set_latency(&self, latency: Duration) {
        self.shared.latency_ms.store(latency.as_millis() as usize, Ordering::SeqCst);
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.shared.requests.lock().unwrap().clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }

    pub fn embed_count(&self) -> usize {
        self.shared.embed_calls.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.shared.requests.lock().unwrap().clear();
        self.shared.peak.store(0, Ordering::SeqCst);
        self.shared.embed_calls.store(0, Ordering::SeqCst);
    }
}

impl Drop for MockLlm {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/embed", post(embed))
        .with_state(shared)
}

struct InFlight<'a>(&'a Shared);

impl<'a> InFlight<'a> {
    fn enter(shared: &'a Shared) -> Self {
        let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        shared.peak.fetch_max(now, Ordering::SeqCst);
        InFlight(shared)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn chat(State(shared): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Response {
    let _guard = InFlight::enter(&shared);
    let mut req: MockRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, json!({"error": {"message": e.to_string()}}).to_string()).into_response(),
    };
    req.authorization = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    shared.requests.lock().unwrap().push(req.clone());
    let latency = shared.latency_ms.load(Ordering::SeqCst);
    if latency > 0 {
        tokio::time::sleep(Duration::from_millis(latency as u64)).await;
    }
    let scripted = shared.script.lock().unwrap().pop_front();
    let reply = scripted.unwrap_or_else(|| (shared.responder)(&req));
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [("content-type", "application/json")], reply.body).into_response()
}

#[derive(Deserialize)]
struct EmbedRequest {
    texts: Vec<String>,
}

/// Deterministic toy contextual embeddings: lowercase alphanumeric tokens,
/// each mapped to an 8-dimensional vector derived from its bytes.
async fn embed(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    shared.embed_calls.fetch_add(1, Ordering::SeqCst);
    let req: EmbedRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, json!({"error": {"message": e.to_string()}}).to_string()).into_response(),
    };
    let mut tokens = Vec::new();
    let mut vectors = Vec::new();
    for text in &req.texts {
        let toks: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        vectors.push(toks.iter().map(|t| toy_vector(t)).collect::<Vec<_>>());
        tokens.push(toks);
    }
    axum::Json(json!({"tokens": tokens, "vectors": vectors})).into_response()
}

fn toy_vector(token: &str) -> Vec<f64> {
    let mut v = vec![0.0; 8];
    for (i, b) in token.bytes().enumerate() {
        v[(b as usize + i) % 8] += 1.0;
    }
    v
}
