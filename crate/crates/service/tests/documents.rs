mod support;

use reqwest::blocking::multipart::{Form, Part};
use serde_json::{json, Value};
use support::{error_code, image_only_pdf, text_pdf, Harness};

#[test]
fn pdf_upload_returns_created_with_doc_id() {
    let h = Harness::start();
    let resp = h
        .post("/documents")
        .header("content-type", "application/pdf")
        .body(text_pdf("Process mining of hospital logs"))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 201);
    let body: Value = resp.json().unwrap();
    let doc_id = body["doc_id"].as_str().unwrap();
    assert_eq!(body["page_count"], 1);
    let doc: Value = h.get(&format!("/documents/{doc_id}")).send().unwrap().json().unwrap();
    assert!(doc["full_text"].as_str().unwrap().contains("Process mining of hospital logs"));
    assert_eq!(doc["pages"][0]["page_number"], 1);
}

#[test]
fn multipart_upload_keeps_filename() {
    let h = Harness::start();
    let part = Part::bytes(text_pdf("Conformance checking")).file_name("paper.pdf");
    let resp = h.post("/documents").multipart(Form::new().part("file", part)).send().unwrap();
    assert_eq!(resp.status(), 201);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["source_filename"], "paper.pdf");

    let part = Part::bytes(b"hello".to_vec()).file_name("x.txt");
    let resp = h.post("/documents").multipart(Form::new().part("other", part)).send().unwrap();
    assert_eq!(error_code(resp), (400, "MISSING_FILE_FIELD".into()));
}

#[test]
fn image_only_pdf_is_rejected_with_no_text_layer() {
    let h = Harness::start();
    let resp = h.post("/documents").body(image_only_pdf()).send().unwrap();
    assert_eq!(error_code(resp), (400, "NO_TEXT_LAYER".into()));
}

#[test]
fn malformed_and_empty_uploads_are_rejected() {
    let h = Harness::start();
    let resp = h.post("/documents").body(b"%PDF-1.5 garbage".to_vec()).send().unwrap();
    assert_eq!(error_code(resp), (400, "MALFORMED_PDF".into()));
    let resp = h.post("/documents").body(Vec::<u8>::new()).send().unwrap();
    assert_eq!(error_code(resp), (400, "EMPTY_BODY".into()));
    let resp = h.post("/documents").body(" \n\t ").send().unwrap();
    assert_eq!(error_code(resp), (400, "EMPTY_DOCUMENT".into()));
}

#[test]
fn reupload_gives_new_id_and_identical_text() {
    let h = Harness::start();
    let pdf = text_pdf("Declarative process models");
    let ids: Vec<String> = (0..2)
        .map(|_| {
            let resp = h.post("/documents").body(pdf.clone()).send().unwrap();
            assert_eq!(resp.status(), 201);
            resp.json::<Value>().unwrap()["doc_id"].as_str().unwrap().to_string()
        })
        .collect();
    assert_ne!(ids[0], ids[1]);
    let docs: Vec<Value> = ids
        .iter()
        .map(|id| h.get(&format!("/documents/{id}")).send().unwrap().json().unwrap())
        .collect();
    assert_eq!(docs[0]["full_text"], docs[1]["full_text"]);
    assert_eq!(docs[0]["pages"], docs[1]["pages"]);
}

#[test]
fn oversize_uploads_get_413() {
    let h = Harness::start_with("max_upload_bytes = 1024");
    let big = vec![b'a'; 4096];
    let resp = h.post("/documents").body(big.clone()).send().unwrap();
    assert_eq!(error_code(resp), (413, "PAYLOAD_TOO_LARGE".into()));
    // Chunked body without a declared length.
    let body = reqwest::blocking::Body::new(std::io::Cursor::new(big));
    let resp = h.post("/documents").body(body).send().unwrap();
    assert_eq!(error_code(resp), (413, "PAYLOAD_TOO_LARGE".into()));
    assert_eq!(h.post("/documents").body(vec![b'a'; 1000]).send().unwrap().status(), 201);
}

#[test]
fn unknown_ids_are_404_with_codes() {
    let h = Harness::start();
    for (path, code) in [
        ("/documents/nope", "DOCUMENT_NOT_FOUND"),
        ("/jobs/nope", "JOB_NOT_FOUND"),
        ("/benchmarks/nope", "BENCHMARK_NOT_FOUND"),
        ("/gold-files/nope", "GOLD_FILE_NOT_FOUND"),
        ("/question-sets/nope", "NOT_FOUND"),
        ("/no-such-route", "ROUTE_NOT_FOUND"),
    ] {
        let resp = h.get(path).send().unwrap();
        assert_eq!(error_code(resp), (404, code.to_string()), "{path}");
    }
}

#[test]
fn question_sets_list_detail_and_version_pinning() {
    let h = Harness::start();
    let list: Value = h.get("/question-sets").send().unwrap().json().unwrap();
    assert_eq!(list, json!([{"set_id": "bpm-demo", "title": "Business process management concepts", "version": 1, "target_count": 32}]));

    let fixture: Value =
        serde_json::from_str(&std::fs::read_to_string(support::bench_dir().join("question_set.json")).unwrap()).unwrap();
    let detail: Value = h.get("/question-sets/bpm-demo").send().unwrap().json().unwrap();
    assert_eq!(detail, fixture);

    let set = |version: u32, question: &str| {
        json!({"set_id": "tiny", "title": "Tiny", "version": version,
               "targets": [{"target_id": "q", "question": question, "kind": "free_text"}]})
    };
    assert_eq!(h.post_json("/question-sets", &set(1, "First?")).status(), 201);
    assert_eq!(h.post_json("/question-sets", &set(2, "Second?")).status(), 201);
    let latest: Value = h.get("/question-sets/tiny").send().unwrap().json().unwrap();
    assert_eq!(latest["targets"][0]["question"], "Second?");
    let pinned: Value = h.get("/question-sets/tiny?version=1").send().unwrap().json().unwrap();
    assert_eq!(pinned["targets"][0]["question"], "First?");

    assert_eq!(error_code(h.post_json("/question-sets", &set(2, "Again?"))), (409, "STALE_VERSION".into()));
    assert_eq!(error_code(h.get("/question-sets/tiny?version=9").send().unwrap()), (404, "NOT_FOUND".into()));
    assert_eq!(error_code(h.get("/question-sets/tiny?version=x").send().unwrap()), (400, "INVALID_QUERY".into()));

    let dangling = json!({"set_id": "dangle", "title": "D", "version": 1, "targets": [{
        "target_id": "q", "question": "Q?", "kind": "free_text",
        "examples": [{"document_ref": "missing-doc", "question": "Q?",
                      "ideal_answer": {"reasoning": "r", "context": "c", "answer": "a"}}]}]});
    assert_eq!(error_code(h.post_json("/question-sets", &dangling)), (422, "DANGLING_EXAMPLE_REF".into()));
    let bad = json!({"set_id": "bad", "title": "B", "version": 1, "targets": [{"target_id": "q", "question": "Q?", "kind": "categorical"}]});
    assert_eq!(error_code(h.post_json("/question-sets", &bad)), (422, "MISSING_VOCABULARY".into()));
}

#[test]
fn openapi_paths_are_all_routed() {
    let h = Harness::start();
    let openapi = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/openapi.yaml")).unwrap();
    let paths: Vec<&str> = openapi
        .lines()
        .filter_map(|l| l.strip_prefix("  /").map(|p| p.trim_end_matches(':')))
        .collect();
    assert_eq!(paths.len(), 11);
    for path in paths {
        let concrete: String = path.split('/').map(|seg| if seg.starts_with('{') { "x" } else { seg }).collect::<Vec<_>>().join("/");
        let resp = h.get(&format!("/{concrete}")).send().unwrap();
        let status = resp.status().as_u16();
        if status != 200 {
            let (_, code) = error_code(resp);
            assert_ne!(code, "ROUTE_NOT_FOUND", "/{path}");
        }
    }
}
