mod common;

use papertrace::pipeline::Command;

#[test]
fn metrics_match_independent_recount() {
    let tmp = tempfile::tempdir().unwrap();
    common::run_lexical(Command::Run, &common::fixture_config(tmp.path())).unwrap();
    let written = common::read_value(tmp.path(), "metrics.json");
    let recounted = common::oracle::recount(tmp.path());
    assert_eq!(written, recounted);
}

#[test]
fn fixture_metrics_by_hand() {
    let tmp = tempfile::tempdir().unwrap();
    common::run_lexical(Command::Run, &common::fixture_config(tmp.path())).unwrap();
    let m = common::read_value(tmp.path(), "metrics.json");
    assert_eq!(m["n_files"], 6);
    assert_eq!(m["n_blocks"]["file"], 6);
    assert_eq!(m["n_concepts"], 5);
    assert_eq!(m["n_anchor_verified"], 5);
    assert_eq!(m["n_unimplemented_concepts"], 1);
    let ratio = m["compression_ratio"].as_f64().unwrap();
    assert!(ratio > 0.0 && ratio < 1.0, "{ratio}");
}

#[test]
fn execution_counters_live_in_run_record() {
    let tmp = tempfile::tempdir().unwrap();
    common::run_lexical(Command::Run, &common::fixture_config(tmp.path())).unwrap();
    let metrics = common::read_value(tmp.path(), "metrics.json");
    assert!(metrics.get("n_requests").is_none());
    let run = common::read_value(tmp.path(), "run.json");
    assert_eq!(run["status"], "succeeded");
    assert!(run["execution"]["n_requests"].as_u64().unwrap() > 0);
    assert_eq!(run["execution"]["n_retries"], 0);
}

#[test]
fn rerun_hits_the_summary_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::fixture_config(tmp.path());
    common::run_lexical(Command::Run, &cfg).unwrap();
    let first = common::read_value(tmp.path(), "run.json");
    cfg.force = true;
    common::run_lexical(Command::Run, &cfg).unwrap();
    let second = common::read_value(tmp.path(), "run.json");
    let generated = first["execution"]["summaries_generated"].as_u64().unwrap();
    assert!(generated > 0);
    assert_eq!(second["execution"]["summaries_generated"], 0);
    assert_eq!(second["execution"]["cache_hits"].as_u64().unwrap(), generated);
}
