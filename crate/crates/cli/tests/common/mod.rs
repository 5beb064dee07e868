#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Small enough that the whole pipeline runs in seconds.
pub const TINY_CONFIG: &str = r#"
seed = 3
[synth]
contests = 12
[ggnn]
hidden_dim = 16
token_embedding_dim = 8
type_embedding_dim = 4
rounds = 2
[ggnn_train]
max_epochs = 2
[aggregator]
hidden_dim = 16
[aggregator_train]
max_epochs = 3
[text]
layers = 1
dim = 16
heads = 2
ff_dim = 32
max_len = 64
[text_train]
max_epochs = 2
[baseline.logistic]
epochs = 50
"#;

pub const TRAINING_COMMANDS: [&str; 8] = [
    "ingest",
    "split",
    "graph-build",
    "train-ggnn",
    "train-agg",
    "train-text",
    "train-baseline",
    "fit-thresholds",
];

pub fn cptag(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cptag"))
        .current_dir(cwd)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cptag")
}

pub fn cptag_ok(cwd: &Path, args: &[&str]) {
    let out = cptag(cwd, args);
    assert!(
        out.status.success(),
        "cptag {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
