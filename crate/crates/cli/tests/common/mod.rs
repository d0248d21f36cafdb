// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covforge_core::seeds::fingerprint;

pub const RUN_MANIFEST: &str = "run_manifest.json";

pub fn covforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covforge"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn covforge")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Runs and requires the given exit code, echoing stderr on mismatch.
pub fn expect(args: &[&str], want: i32) -> Output {
    let out = covforge(args);
    assert_eq!(
        code(&out),
        want,
        "covforge {args:?}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes a 20-repo (or `repos`-repo) fixture under `dir` and returns its job file.
pub fn fixture(dir: &Path, repos: usize, seed: u64) -> PathBuf {
    let n = repos.to_string();
    let seed = seed.to_string();
    expect(&["--seed", &seed, "fixture", "--out", s(dir), "--repos", &n], 0);
    dir.join("job.toml")
}

/// Hashes of every file under `root`, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.insert(rel, fingerprint(&std::fs::read(&p).unwrap()));
        }
    }
    out
}

pub fn is_run_manifest(rel: &str) -> bool {
    rel.ends_with(RUN_MANIFEST) || rel.ends_with(".run.json")
}

pub fn manifest_outputs(path: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v["outputs"].clone()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
