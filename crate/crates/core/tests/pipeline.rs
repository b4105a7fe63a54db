use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use paperq_core::cache::ResponseCache;
use paperq_core::evaluation::{parse_gold_jsonl, OneHotProvider};
use paperq_core::ingest::{ingest_text, SourceDocument};
use paperq_core::llm_client::{LlmClient, ModelEndpoint, RetryPolicy};
use paperq_core::pipeline::{run_matrix, Extractor};
use paperq_core::registry::{load_question_set, QuestionSet};
use paperq_mock_llm::scenario::Scenario;
use paperq_mock_llm::MockLlm;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bench")
}

fn load() -> (QuestionSet, HashMap<String, Arc<SourceDocument>>) {
    let dir = fixture_dir();
    let set = load_question_set(&std::fs::read_to_string(dir.join("question_set.json")).unwrap()).unwrap();
    let mut docs = HashMap::new();
    for entry in std::fs::read_dir(dir.join("docs")).unwrap() {
        let path = entry.unwrap().path();
        let id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let doc = ingest_text(&std::fs::read_to_string(&path).unwrap(), &id).unwrap();
        docs.insert(id, Arc::new(doc));
    }
    (set, docs)
}

fn server() -> MockLlm {
    let scenario = Scenario::load(&fixture_dir()).unwrap();
    MockLlm::start(move |req| scenario.reply(req))
}

fn endpoint(name: &str, server: &MockLlm) -> ModelEndpoint {
    let mut e = ModelEndpoint::new(name, server.url());
    e.max_retries = 0;
    e
}

fn extractor() -> Extractor {
    Extractor::new(LlmClient::new().with_retry(RetryPolicy {
        base: Duration::from_millis(1),
        cap: Duration::from_millis(1),
    }))
}

#[test]
fn extraction_aligns_context_to_source_line() {
    let (set, docs) = load();
    let server = server();
    let target = set.target("modeling_language").unwrap();
    let doc = &docs["d2"];
    let out = extractor().extract_one(&endpoint("alpha", &server), target, doc, 0, &docs);
    let record = out.record;
    let extraction = record.extraction.as_ref().expect("parsed");
    assert_eq!(extraction.answer, "bpmn");
    assert!(!record.unverifiable);
    let line = doc.full_text.lines().nth(2).unwrap();
    let start = doc.full_text.find(line).unwrap();
    let span = &record.spans[0];
    assert_eq!((span.start, span.end), (start, start + line.chars().count()));
    assert_eq!(span.score, 1.0);
    assert_eq!(span.page_number, Some(1));
}

#[test]
fn few_shot_sends_example_turns() {
    let (set, docs) = load();
    let server = server();
    let target = set.target("has_evaluation").unwrap();
    let out = extractor().extract_one(&endpoint("alpha", &server), target, &docs["d3"], 3, &docs);
    assert!(out.record.is_success());
    assert_eq!(server.requests()[0].messages.len(), 7);
    assert_eq!(out.record.shot_mode, 3);
}

#[test]
fn parse_failure_is_recorded() {
    let (set, docs) = load();
    let server = server();
    let target = set.target("tool").unwrap();
    let out = extractor().extract_one(&endpoint("beta", &server), target, &docs["d6"], 3, &docs);
    assert!(!out.record.is_success());
    assert_eq!(out.record.error.as_ref().unwrap().code, "NoJsonFound");
}

#[test]
fn stored_completion_reproduces_record() {
    let (set, docs) = load();
    let server = server();
    let ex = extractor();
    let target = set.target("key_finding").unwrap();
    let first = ex.extract_one(&endpoint("beta", &server), target, &docs["d4"], 0, &docs);
    let replay = ex.finish("beta", target, &docs["d4"], first.completion.as_ref().unwrap());
    assert_eq!(replay, first.record);
}

#[test]
fn cache_serves_repeat_requests() {
    let (set, docs) = load();
    let server = server();
    let tmp = tempfile::tempdir().unwrap();
    let target = set.target("domain").unwrap();
    let e = endpoint("alpha", &server);

    let ex = extractor().with_cache(ResponseCache::open(tmp.path()).unwrap());
    let a = ex.extract_one(&e, target, &docs["d1"], 0, &docs);
    assert!(!a.from_cache);
    let ex = extractor().with_cache(ResponseCache::open(tmp.path()).unwrap());
    let b = ex.extract_one(&e, target, &docs["d1"], 0, &docs);
    assert!(b.from_cache);
    assert_eq!(ex.network_calls(), 0);
    assert_eq!(server.request_count(), 1);
    assert_eq!(a.record, b.record);
}

#[test]
fn missing_examples_is_a_record_error() {
    let (_, docs) = load();
    let server = server();
    let target = paperq_core::registry::ExtractionTarget::custom("What dataset is used?");
    let out = extractor().extract_one(&endpoint("alpha", &server), &target, &docs["d1"], 3, &docs);
    assert_eq!(out.record.error.unwrap().code, "InsufficientExamples");
    assert_eq!(server.request_count(), 0);
}

#[test]
fn matrix_over_single_document() {
    let (set, docs) = load();
    let server = server();
    let gold_src = std::fs::read_to_string(fixture_dir().join("gold.jsonl")).unwrap();
    let gold: Vec<_> = parse_gold_jsonl(&gold_src)
        .unwrap()
        .into_iter()
        .filter(|g| g.doc_id == "d2")
        .collect();
    let cells = run_matrix(
        &extractor(),
        &set,
        &gold,
        &docs,
        &[endpoint("alpha", &server)],
        &[0, 3],
        4,
        &OneHotProvider,
    )
    .unwrap();
    assert_eq!(cells.len(), 2);
    for cell in &cells {
        assert_eq!(cell.records.len(), 32);
        assert_eq!(cell.report.overall, 1.0);
        assert_eq!(cell.report.counts.total(), 32);
    }
    assert_eq!(server.request_count(), 64);
}
