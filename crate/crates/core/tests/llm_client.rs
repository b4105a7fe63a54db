use std::time::Duration;

use paperq_core::ingest::ingest_text;
use paperq_core::llm_client::{LlmClient, LlmError, ModelEndpoint, RetryPolicy};
use paperq_core::prompting::{build_zero_shot, PromptBundle};
use paperq_core::registry::ExtractionTarget;
use paperq_mock_llm::{MockLlm, MockReply};

fn client() -> LlmClient {
    LlmClient::new().with_retry(RetryPolicy {
        base: Duration::from_millis(5),
        cap: Duration::from_millis(20),
    })
}

fn endpoint(server: &MockLlm) -> ModelEndpoint {
    let mut e = ModelEndpoint::new("mock", server.url());
    e.request_timeout = 10;
    e.max_retries = 3;
    e
}

fn bundle(question: &str) -> PromptBundle {
    let doc = ingest_text("Some document text.", "d").unwrap();
    build_zero_shot(&ExtractionTarget::custom(question), &doc).unwrap()
}

const ANSWER: &str = r#"{"reasoning": "r", "context": "c", "answer": "a"}"#;

#[test]
fn fixed_answer_is_recorded_verbatim() {
    let server = MockLlm::start(|_| MockReply::content(ANSWER));
    let rec = client().complete(&endpoint(&server), &bundle("Q?")).unwrap();
    assert_eq!(rec.raw_response_text, ANSWER);
    assert_eq!(rec.attempts, 1);
    assert_eq!(rec.temperature, 0.0);
    assert_eq!(rec.endpoint_name, "mock");
    let seen = server.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].temperature, Some(0.0));
    assert_eq!(seen[0].model, "mock");
    assert!(seen[0].authorization.is_none());
}

#[test]
fn two_rate_limits_then_success_takes_three_attempts() {
    let server = MockLlm::start(|_| MockReply::content(ANSWER));
    server.push_script([MockReply::status(429, "{}"), MockReply::status(429, "{}")]);
    let rec = client().complete(&endpoint(&server), &bundle("Q?")).unwrap();
    assert_eq!(rec.attempts, 3);
    assert_eq!(server.request_count(), 3);
}

#[test]
fn persistent_rate_limit_gives_up() {
    let server = MockLlm::start(|_| MockReply::status(429, "{}"));
    let err = client().complete(&endpoint(&server), &bundle("Q?")).unwrap_err();
    assert_eq!(err, LlmError::RateLimited { attempts: 4 });
    assert_eq!(server.request_count(), 4);
}

#[test]
fn server_errors_are_retried() {
    let server = MockLlm::start(|_| MockReply::content(ANSWER));
    server.push_script([MockReply::status(503, "busy")]);
    let rec = client().complete(&endpoint(&server), &bundle("Q?")).unwrap();
    assert_eq!(rec.attempts, 2);
}

#[test]
fn unauthorized_is_not_retried() {
    let server = MockLlm::start(|_| MockReply::status(401, r#"{"error":"bad key"}"#));
    let err = client().complete(&endpoint(&server), &bundle("Q?")).unwrap_err();
    assert!(matches!(err, LlmError::AuthFailure { status: 401, .. }), "{err:?}");
    assert_eq!(server.request_count(), 1);
}

#[test]
fn credential_comes_from_named_variable() {
    let server = MockLlm::start(|_| MockReply::content(ANSWER));
    let mut e = endpoint(&server);
    e.api_key_ref = Some("PAPERQ_TEST_KEY_PRESENT".into());
    std::env::set_var("PAPERQ_TEST_KEY_PRESENT", "sk-test");
    client().complete(&e, &bundle("Q?")).unwrap();
    assert_eq!(server.requests()[0].authorization.as_deref(), Some("Bearer sk-test"));

    e.api_key_ref = Some("PAPERQ_TEST_KEY_ABSENT".into());
    let err = client().complete(&e, &bundle("Q?")).unwrap_err();
    assert_eq!(err, LlmError::MissingCredential("PAPERQ_TEST_KEY_ABSENT".into()));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn oversized_prompt_fails_before_sending() {
    let server = MockLlm::echo();
    let mut e = endpoint(&server);
    e.max_context = 10;
    let err = client().complete(&e, &bundle("Q?")).unwrap_err();
    assert!(matches!(err, LlmError::ContextOverflow(_)));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn provider_context_error_is_classified() {
    let server = MockLlm::start(|_| {
        MockReply::status(400, r#"{"error":{"code":"context_length_exceeded","message":"too long"}}"#)
    });
    let err = client().complete(&endpoint(&server), &bundle("Q?")).unwrap_err();
    assert!(matches!(err, LlmError::ContextOverflow(_)), "{err:?}");
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let server = MockLlm::echo();
    let url = server.url();
    drop(server);
    let mut e = ModelEndpoint::new("gone", url);
    e.max_retries = 1;
    let err = client().complete(&e, &bundle("Q?")).unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err:?}");
}

fn questions(n: usize) -> Vec<PromptBundle> {
    (0..n).map(|i| bundle(&format!("question number {i}?"))).collect()
}

#[test]
fn sequential_batch_never_overlaps() {
    let server = MockLlm::echo();
    server.set_latency(Duration::from_millis(20));
    let out = client().complete_batch(&endpoint(&server), &questions(10), 1);
    assert!(out.iter().all(Result::is_ok));
    assert_eq!(server.max_in_flight(), 1);
}

#[test]
fn batch_respects_parallelism_and_order() {
    let server = MockLlm::echo();
    server.set_latency(Duration::from_millis(40));
    let bundles = questions(10);
    let out = client().complete_batch(&endpoint(&server), &bundles, 4);
    assert!(server.max_in_flight() <= 4);
    assert!(server.max_in_flight() >= 2);
    for (b, r) in bundles.iter().zip(&out) {
        assert_eq!(r.as_ref().unwrap().raw_response_text, b.query().content);
    }
}

#[test]
fn one_failure_does_not_abort_batch() {
    let server = MockLlm::start(|req| {
        if req.last_user().contains("question number 3?") {
            MockReply::status(400, "bad")
        } else {
            MockReply::content(ANSWER)
        }
    });
    let out = client().complete_batch(&endpoint(&server), &questions(10), 3);
    assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 9);
    assert!(matches!(out[3], Err(LlmError::ProviderError { status: 400, .. })));
}
