mod common;

use std::fs::OpenOptions;
use std::io::Write;

use common::{cptag, cptag_ok, TINY_CONFIG, TRAINING_COMMANDS};
use cptag_core::corpus::{Problem, PROBLEMS_FILE};
use cptag_core::ensemble::PredictionRecord;

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[ggnn]\nrounds = 0\n").unwrap();
    let out = cptag(dir.path(), &["--config", "bad.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("[ggnn]"));

    std::fs::write(dir.path().join("typo.toml"), "[text]\nlayer = 2\n").unwrap();
    let out = cptag(dir.path(), &["--config", "typo.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("layer"));

    let out = cptag(dir.path(), &["--config", "absent.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("ok.toml"), "").unwrap();
    let out = cptag(dir.path(), &["--threads", "0", "--config", "ok.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3_and_name_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TINY_CONFIG).unwrap();
    for (cmd, producer) in [("ingest", "synth-corpus"), ("split", "ingest"), ("graph-build", "split")] {
        let out = cptag(dir.path(), &["--config", "run.toml", cmd]);
        assert_eq!(out.status.code(), Some(3), "{cmd}: {}", stderr(&out));
        assert!(stderr(&out).contains(&format!("run `cptag {producer}` first")), "{cmd}: {}", stderr(&out));
    }
}

#[test]
fn full_pipeline_with_a_statement_only_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("run.toml"), TINY_CONFIG).unwrap();
    cptag_ok(cwd, &["--config", "run.toml", "synth-corpus"]);

    let orphan = Problem {
        id: "1011Z".into(),
        contest_id: "1011".into(),
        statement_latex: "Given $n$ lanterns on a quiet riverbank, output their brightness in order.".into(),
        tags: ["sorting".to_string()].into(),
    };
    let mut problems = OpenOptions::new().append(true).open(cwd.join("corpus").join(PROBLEMS_FILE)).unwrap();
    writeln!(problems, "{}", serde_json::to_string(&orphan).unwrap()).unwrap();

    for cmd in &TRAINING_COMMANDS[..7] {
        cptag_ok(cwd, &["--config", "run.toml", cmd]);
    }
    let out = cptag(cwd, &["--config", "run.toml", "evaluate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("run `cptag fit-thresholds` first"), "{}", stderr(&out));

    cptag_ok(cwd, &["--config", "run.toml", "fit-thresholds"]);
    cptag_ok(cwd, &["--config", "run.toml", "predict"]);
    let text = std::fs::read_to_string(cwd.join("work").join("predictions.jsonl")).unwrap();
    let records: Vec<PredictionRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let r = records.iter().find(|r| r.problem_id == "1011Z").expect("statement-only problem predicted");
    assert!(r.text_only);
    assert!(r.tags.values().all(|s| s.code.is_none() && s.combined == s.text));
    assert!(records.iter().filter(|r| r.problem_id != "1011Z").all(|r| !r.text_only));

    cptag_ok(cwd, &["--config", "run.toml", "evaluate"]);
    let summary = std::fs::read_to_string(cwd.join("work").join("reports").join("summary.csv")).unwrap();
    for model in ["ensemble", "code", "text", "baseline_metrics", "baseline_tfidf", "ggnn_solution"] {
        assert!(summary.lines().any(|l| l.starts_with(model)), "{model} missing from summary");
    }
    cptag_ok(cwd, &["--config", "run.toml", "correlate"]);
    cptag_ok(cwd, &["--config", "run.toml", "suggest"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cwd.join("work").join("manifest.json")).unwrap()).unwrap();
    let paths: Vec<&str> = manifest.as_array().unwrap().iter().map(|e| e["path"].as_str().unwrap()).collect();
    for expected in ["predictions.jsonl", "correlation.csv", "suggestions.json", "config.resolved.toml"] {
        assert!(paths.contains(&expected), "{expected} not in manifest");
    }
}
