use paperq_mock_llm::{MockLlm, MockReply};
use serde_json::{json, Value};

fn chat(url: &str, content: &str) -> (u16, Value) {
    let resp = reqwest::blocking::Client::new()
        .post(format!("{url}/v1/chat/completions"))
        .json(&json!({"model": "m", "messages": [{"role": "user", "content": content}]}))
        .send()
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(Value::Null))
}

#[test]
fn echoes_last_user_message() {
    let server = MockLlm::echo();
    let (status, body) = chat(&server.url(), "hello");
    assert_eq!(status, 200);
    assert_eq!(body["choices"][0]["message"]["content"], "hello");
    assert_eq!(server.request_count(), 1);
    assert_eq!(server.requests()[0].last_user(), "hello");
}

#[test]
fn script_precedes_responder() {
    let server = MockLlm::echo();
    server.push_script([MockReply::status(429, "{}")]);
    assert_eq!(chat(&server.url(), "x").0, 429);
    assert_eq!(chat(&server.url(), "x").0, 200);
    assert_eq!(server.request_count(), 2);
}

#[test]
fn embed_endpoint_aligns_tokens_and_vectors() {
    let server = MockLlm::echo();
    let body: Value = reqwest::blocking::Client::new()
        .post(format!("{}/embed", server.url()))
        .json(&json!({"texts": ["Process mining", ""]}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(body["tokens"][0], json!(["process", "mining"]));
    assert_eq!(body["vectors"][0].as_array().unwrap().len(), 2);
    assert_eq!(body["tokens"][1], json!([]));
    assert_eq!(server.embed_count(), 1);
}
