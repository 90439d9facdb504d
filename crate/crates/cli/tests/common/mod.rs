#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attnsum_core::synthetic::grid_suite;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn attnsum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnsum"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Compares `actual` with a golden file, or rewrites it when
/// `ATTNSUM_UPDATE_GOLDEN` is set.
pub fn assert_golden(actual: &str, name: &str) {
    let path = golden(name);
    if std::env::var_os("ATTNSUM_UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "output differs from {}", path.display());
}

/// Writes a synthetic selection dataset and a manifest whose toy provider
/// singles out liked titles and five-star ratings.
pub fn grid_manifest(dir: &Path, users: usize, movies: usize, seed: u64) -> PathBuf {
    let suite = grid_suite(users, movies, seed);
    let data: String = suite
        .records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    fs::write(dir.join("grid.jsonl"), data).unwrap();
    let rules: Vec<String> = suite
        .provider
        .rules
        .iter()
        .map(|r| format!("{{ keyword = {}, weight = {:?} }}", toml_str(&r.keyword), r.weight))
        .collect();
    let manifest = format!(
        r#"seed = {seed}
jobs = 3
output_dir = "out"
methods = ["attn-gs", "truncate", "random-mark", "mark-all", "direct"]
limits = [50, 100, 150, 200]
alpha = 0.2
layer = 6
created_at = "2000-01-01T00:00:00Z"

[dataset]
task = "selection"
path = "grid.jsonl"

[provider]
kind = "toy"
rules = [{}]

[generator]
kind = "scripted"
"#,
        rules.join(", ")
    );
    let path = dir.join("run.toml");
    fs::write(&path, manifest).unwrap();
    path
}

fn toml_str(s: &str) -> String {
    serde_json::to_string(s).unwrap()
}

/// Every regular file under `dir`, relative path and bytes, sorted by path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
