#![allow(dead_code)]

use std::path::PathBuf;
use std::time::{Duration, Instant};

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream};
use paperq_core::config::Config;
use paperq_mock_llm::scenario::Scenario;
use paperq_mock_llm::{MockLlm, MockReply};
use paperq_service::{BackgroundServer, Service};
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde_json::{json, Value};

pub const TOKEN: &str = "test-token";
pub const CUSTOM_QUESTION: &str = "What dataset is used?";

pub fn bench_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bench")
}

/// Scenario answers for fixture prompts; a fixed free-text answer for the
/// custom question.
pub fn mock() -> MockLlm {
    let scenario = Scenario::load(&bench_dir()).expect("fixture loads");
    MockLlm::start(move |req| {
        if req.last_user().contains(CUSTOM_QUESTION) {
            let line = req
                .last_user()
                .lines()
                .find_map(|l| l.find("Paper D").map(|i| l[i..].to_string()))
                .unwrap_or_default();
            MockReply::content(&json!({"reasoning": "Stated in the title.", "context": line, "answer": "none given"}).to_string())
        } else {
            scenario.reply(req)
        }
    })
}

pub fn config(data_dir: &std::path::Path, llm_url: &str, extra: &str) -> Config {
    let toml = format!(
        r#"
workers = 2
parallelism = 4
{extra}

[retry]
base_ms = 1
cap_ms = 5

[[endpoints]]
name = "alpha"
base_url = "{llm_url}"
max_context = 200000
max_retries = 0

[[endpoints]]
name = "beta"
base_url = "{llm_url}"
max_context = 200000
max_retries = 0
"#
    );
    let mut cfg = Config::from_toml(&toml).expect("test config parses");
    cfg.data_dir = data_dir.to_path_buf();
    cfg.seed_documents = Some(bench_dir().join("docs"));
    cfg.question_sets = vec![bench_dir().join("question_set.json")];
    cfg
}

pub struct Harness {
    pub server: BackgroundServer,
    pub llm: MockLlm,
    pub dir: tempfile::TempDir,
    pub http: Client,
}

impl Harness {
    pub fn start() -> Self {
        Self::start_with("")
    }

    pub fn start_with(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let llm = mock();
        let service = Service::new(config(dir.path(), &llm.url(), extra), TOKEN).expect("service starts");
        let server = BackgroundServer::start(service, "127.0.0.1:0".parse().unwrap()).expect("server binds");
        Harness {
            server,
            llm,
            dir,
            http: Client::builder().timeout(Duration::from_secs(60)).build().unwrap(),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.url())
    }

    pub fn get(&self, path: &str) -> RequestBuilder {
        self.http.get(self.url(path)).bearer_auth(TOKEN)
    }

    pub fn post(&self, path: &str) -> RequestBuilder {
        self.http.post(self.url(path)).bearer_auth(TOKEN)
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Response {
        self.post(path).json(body).send().unwrap()
    }

    pub fn upload_text(&self, text: &str) -> String {
        let resp = self.post("/documents").body(text.to_string()).send().unwrap();
        assert_eq!(resp.status(), 201);
        resp.json::<Value>().unwrap()["doc_id"].as_str().unwrap().to_string()
    }

    /// Polls until the record leaves queued/running; asserts the observed
    /// statuses never move backwards.
    pub fn wait(&self, path: &str) -> Value {
        let rank = |s: &str| match s {
            "queued" => 0,
            "running" => 1,
            "done" | "failed" => 2,
            other => panic!("unknown status {other}"),
        };
        let deadline = Instant::now() + Duration::from_secs(60);
        let mut last = 0;
        loop {
            let body: Value = self.get(path).send().unwrap().json().unwrap();
            let status = body["status"].as_str().unwrap().to_string();
            let r = rank(&status);
            assert!(r >= last, "status went backwards to {status}");
            last = r;
            if r == 2 {
                return body;
            }
            assert!(Instant::now() < deadline, "{path} did not finish");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

pub fn error_code(resp: Response) -> (u16, String) {
    let status = resp.status().as_u16();
    let body: Value = resp.json().expect("error body is JSON");
    (status, body["error"]["code"].as_str().expect("error code").to_string())
}

fn finish_pdf(mut doc: Document, pages_id: lopdf::ObjectId, kids: Vec<Object>) -> Vec<u8> {
    let font_id = doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Helvetica",
    });
    let resources_id = doc.add_object(dictionary! { "Font" => dictionary! { "F1" => font_id } });
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! {
            "Type" => "Pages",
            "Kids" => kids,
            "Count" => count,
            "Resources" => resources_id,
            "MediaBox" => vec![0.into(), 0.into(), 595.into(), 842.into()],
        }),
    );
    let catalog_id = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id });
    doc.trailer.set("Root", catalog_id);
    let mut out = Vec::new();
    doc.save_to(&mut out).expect("pdf serializes");
    out
}

fn page(doc: &mut Document, pages_id: lopdf::ObjectId, operations: Vec<Operation>) -> Object {
    let content = Content { operations };
    let content_id = doc.add_object(Stream::new(dictionary! {}, content.encode().unwrap()));
    doc.add_object(dictionary! {
        "Type" => "Page",
        "Parent" => pages_id,
        "Contents" => content_id,
    })
    .into()
}

/// A one-page PDF with a single line of text.
pub fn text_pdf(line: &str) -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let ops = vec![
        Operation::new("BT", vec![]),
        Operation::new("Tf", vec!["F1".into(), 12.into()]),
        Operation::new("Td", vec![72.into(), 770.into()]),
        Operation::new("Tj", vec![Object::string_literal(line)]),
        Operation::new("ET", vec![]),
    ];
    let kid = page(&mut doc, pages_id, ops);
    finish_pdf(doc, pages_id, vec![kid])
}

/// A one-page PDF that only paints a rectangle.
pub fn image_only_pdf() -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let ops = vec![
        Operation::new("re", vec![72.into(), 72.into(), 200.into(), 200.into()]),
        Operation::new("f", vec![]),
    ];
    let kid = page(&mut doc, pages_id, ops);
    finish_pdf(doc, pages_id, vec![kid])
}
