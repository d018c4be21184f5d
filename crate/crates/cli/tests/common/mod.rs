#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use doccheck_core::model::{save_checkpoint, Checkpoint, Model, ModelConfig};
use doccheck_core::tokenize::Vocabulary;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        max_len: 96,
        num_layers: 1,
        hidden: 16,
        heads: 2,
        intermediate: 32,
        proj_dim: 8,
        seed: 5,
        ..ModelConfig::desk()
    }
}

/// An untrained checkpoint over the byte-level base vocabulary.
pub fn write_random_checkpoint(path: &Path) {
    let vocab = Vocabulary::base();
    let model = Model::new(tiny_config(vocab.len())).unwrap();
    save_checkpoint(path, &Checkpoint { model, vocab }).unwrap();
}

pub fn doccheck(args: &[&str]) -> Output {
    doccheck_env(args, &[])
}

pub fn doccheck_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_doccheck"));
    cmd.args(args).env_remove("DOCCHECK_CHECKPOINT").env("DOCCHECK_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// The last stderr line parsed as the JSON error record.
pub fn error_record(out: &Output) -> serde_json::Value {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let last = err.lines().last().expect("stderr is empty");
    serde_json::from_str(last).unwrap_or_else(|_| panic!("not a JSON record: {last}"))
}
