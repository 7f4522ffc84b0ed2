mod common;

use std::path::Path;

use papertrace::pipeline::Command;

fn validator(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(dir: &Path, artifact: &str) {
    let schema = artifact.replace(".json", ".schema.json");
    let value = common::read_value(dir, artifact);
    let errors: Vec<String> =
        validator(&schema).iter_errors(&value).map(|e| format!("{}: {e}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{artifact}: {errors:#?}");
}

#[test]
fn fixture_bundle_matches_published_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    common::run_lexical(Command::Run, &common::fixture_config(tmp.path())).unwrap();
    for name in ["blocks.json", "chunks.json", "nlr.json", "concepts.json", "tracemap.json", "metrics.json", "run.json"]
    {
        assert_valid(tmp.path(), name);
    }
}

#[test]
fn failed_run_record_matches_schema() {
    let server = common::mock::MockServer::start(vec![common::mock::Scripted::status(400)]);
    let tmp = tempfile::tempdir().unwrap();
    let err = papertrace::pipeline::execute(Command::Run, &common::fixture_config(tmp.path()), &server.backend());
    assert!(err.is_err());
    let record = common::read_value(tmp.path(), "run.json");
    assert_eq!(record["status"], "failed");
    assert_valid(tmp.path(), "run.json");
}

#[test]
fn schemas_reject_malformed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    common::run_lexical(Command::Run, &common::fixture_config(tmp.path())).unwrap();
    let mut map = common::read_value(tmp.path(), "tracemap.json");
    map["links"][0]["confidence"] = serde_json::json!(1.7);
    assert!(!validator("tracemap.schema.json").is_valid(&map));
    let mut blocks = common::read_value(tmp.path(), "blocks.json");
    blocks["blocks"][0]["kind"] = serde_json::json!("Module");
    assert!(!validator("blocks.schema.json").is_valid(&blocks));
}
