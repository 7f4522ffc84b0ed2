mod common;

use common::mock::{MockServer, Scripted};
use papertrace::backend::schema::{ConceptsPayload, SummarizePayload};
use papertrace::backend::{BackendError, GenerationBackend, PromptRequest, TaskId};
use papertrace::config::{ConfigLayer, RunConfig};
use papertrace::pipeline::{execute, Command};

const VALID: &str =
    r#"{"concepts": [{"name": "rate", "description": "d", "category": "method", "anchor_quote": "rate"}]}"#;

fn concepts_request() -> PromptRequest {
    let payload = serde_json::to_value(ConceptsPayload { offset: 0, text: "We compute a rate.".into() }).unwrap();
    PromptRequest::build(TaskId::ExtractConcepts, payload, 512, 16_384)
}

#[test]
fn throttling_then_success_takes_three_attempts() {
    let server = MockServer::start(vec![Scripted::status(429), Scripted::status(429), Scripted::reply(VALID)]);
    let response = server.backend().generate(&concepts_request()).unwrap();
    assert_eq!(response.attempts, 3);
    assert_eq!(server.request_count(), 3);
    assert_eq!(response.parsed["concepts"][0]["name"], "rate");
}

#[test]
fn persistent_server_error_exhausts_after_five_attempts() {
    let server = MockServer::start(vec![Scripted::status(500)]);
    let err = server.backend().generate(&concepts_request()).unwrap_err();
    assert!(matches!(err, BackendError::TransportExhausted { attempts: 5, .. }), "{err:?}");
    assert_eq!(server.request_count(), 5);
}

#[test]
fn invalid_schema_is_repaired_at_most_twice() {
    let bad = r#"{"concepts": [{"description": "no name"}]}"#;
    let server = MockServer::start(vec![Scripted::reply(bad)]);
    let err = server.backend().generate(&concepts_request()).unwrap_err();
    match err {
        BackendError::SchemaInvalid { raw_text, attempts, .. } => {
            assert_eq!(raw_text, bad);
            assert_eq!(attempts, 3);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.request_count(), 3);
    // each re-ask carries the validation error after the rejected reply
    let last = &server.requests()[2]["messages"];
    let messages = last.as_array().unwrap();
    assert_eq!(messages.len(), 6);
    assert!(messages[5]["content"].as_str().unwrap().contains("JSON"));
}

#[test]
fn repair_can_succeed() {
    let server = MockServer::start(vec![Scripted::reply("sorry, no JSON here"), Scripted::reply(VALID)]);
    let response = server.backend().generate(&concepts_request()).unwrap();
    assert_eq!(response.attempts, 2);
}

#[test]
fn fenced_reply_is_accepted() {
    let server = MockServer::start(vec![Scripted::reply(&format!("Here you go:\n```json\n{VALID}\n```"))]);
    assert!(server.backend().generate(&concepts_request()).is_ok());
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![Scripted::status(401)]);
    let err = server.backend().generate(&concepts_request()).unwrap_err();
    assert!(matches!(err, BackendError::Rejected { status: 401, attempts: 1, .. }), "{err:?}");
    assert_eq!(server.request_count(), 1);
}

#[test]
fn oversized_request_is_refused_locally() {
    let server = MockServer::start(vec![Scripted::reply(VALID)]);
    let payload = serde_json::to_value(SummarizePayload { blocks: Vec::new() }).unwrap();
    let mut request = PromptRequest::build(TaskId::Summarize, payload, 512, 16_384);
    request.max_output_tokens = 20_000;
    let err = server.backend().generate(&request).unwrap_err();
    assert!(matches!(err, BackendError::BudgetExceeded { .. }));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn request_carries_model_and_messages() {
    let server = MockServer::start(vec![Scripted::reply(VALID)]);
    server.backend().generate(&concepts_request()).unwrap();
    let body = &server.requests()[0];
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn remote_failure_is_recorded_in_run_record() {
    let server = MockServer::start(vec![Scripted::status(400)]);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::resolve(ConfigLayer {
        repo: Some(common::fixture_repo().to_string_lossy().into_owned()),
        paper: Some(common::fixture_paper()),
        out: Some(tmp.path().to_path_buf()),
        ..Default::default()
    })
    .unwrap();
    let err = execute(Command::Run, &cfg, &server.backend()).unwrap_err();
    assert_eq!(err.stage().as_str(), "summarize");
    let record = common::read_value(tmp.path(), "run.json");
    assert_eq!(record["status"], "failed");
    assert_eq!(record["error"]["stage"], "summarize");
    assert_eq!(record["manifest"]["backend"]["model_id"], "mock-model");
    assert!(tmp.path().join("blocks.json").exists());
    assert!(!tmp.path().join("nlr.json").exists());
}
