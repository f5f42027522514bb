#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vocabforge::synth::{normal_matrix, random_bpe};
use vocabforge::{save_matrix, MarkerConvention, TokenizerModel};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vocabforge"));
    cmd.env_remove("VOCABFORGE_THREADS").env("RUST_LOG", "error");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn vocabforge")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

pub fn write_tokenizer(dir: &Path, name: &str, model: &TokenizerModel) -> (PathBuf, PathBuf) {
    let vocab = dir.join(format!("{name}.vocab.json"));
    let merges = dir.join(format!("{name}.merges.txt"));
    std::fs::write(&vocab, model.vocab().to_json_string()).unwrap();
    std::fs::write(&merges, model.merges_text()).unwrap();
    (vocab, merges)
}

/// Source and target tokenizers with embeddings on disk.
pub struct Files {
    pub dir: tempfile::TempDir,
    pub source_vocab: PathBuf,
    pub source_merges: PathBuf,
    pub target_vocab: PathBuf,
    pub target_merges: PathBuf,
    pub source_emb: PathBuf,
    pub source_head: PathBuf,
    pub helper_emb: PathBuf,
    pub corpus: PathBuf,
}

impl Files {
    pub fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let source = random_bpe("abcdefghilmnorstu", MarkerConvention::MetaSpace, 60, seed);
        let target = random_bpe("abcdefghilmnorstu", MarkerConvention::ByteMarker, 80, seed + 1);
        let (source_vocab, source_merges) = write_tokenizer(dir.path(), "source", &source);
        let (target_vocab, target_merges) = write_tokenizer(dir.path(), "target", &target);
        let source_emb = dir.path().join("source.emb");
        let source_head = dir.path().join("source_head.emb");
        let helper_emb = dir.path().join("helper.emb");
        save_matrix(&normal_matrix(source.vocab().len(), 8, seed ^ 1), &source_emb).unwrap();
        save_matrix(&normal_matrix(source.vocab().len(), 8, seed ^ 2), &source_head).unwrap();
        save_matrix(&normal_matrix(target.vocab().len(), 6, seed ^ 3), &helper_emb).unwrap();
        let corpus = dir.path().join("corpus.txt");
        std::fs::write(&corpus, "ciao mondo bello\nla casa rossa sul monte\n\nun gatto dorme\n").unwrap();
        Files { dir, source_vocab, source_merges, target_vocab, target_merges, source_emb, source_head, helper_emb, corpus }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn adapt_args(&self, method: &str, out: &Path) -> Vec<String> {
        let mut v: Vec<String> = vec![
            "adapt".into(),
            "--method".into(),
            method.into(),
            "--source-emb".into(),
            s(&self.source_emb),
            "--source-vocab".into(),
            s(&self.source_vocab),
            "--source-merges".into(),
            s(&self.source_merges),
            "--target-vocab".into(),
            s(&self.target_vocab),
            "--target-merges".into(),
            s(&self.target_merges),
            "--out".into(),
            s(out),
        ];
        if method == "clp" || method == "sava" {
            v.extend(["--helper-emb".into(), s(&self.helper_emb)]);
        }
        v
    }
}

pub fn s(p: &Path) -> String {
    p.to_str().unwrap().to_owned()
}

/// Drops every `timing_seconds` field.
pub fn without_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(o) => {
            o.remove("timing_seconds");
            o.values_mut().for_each(without_timing);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(without_timing),
        _ => {}
    }
}
