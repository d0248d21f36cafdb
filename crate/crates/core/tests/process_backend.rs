// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use covforge_core::domain::{Repository, SimStatus, Testbench};
use covforge_core::simbridge::{Budget, SimError, SimulatorConfig};

fn repo() -> Repository {
    let mut files = BTreeMap::new();
    files.insert("rtl/top.sv".to_string(), "module top; endmodule".to_string());
    files.insert("Makefile".to_string(), "all:\n".to_string());
    Repository::new("proc", files, 0.5).unwrap()
}

fn config(cmd: &str, root: &Path) -> SimulatorConfig {
    let mut c = SimulatorConfig::process(cmd);
    c.work_root = Some(root.to_path_buf());
    c.timeout_seconds = 5.0;
    c
}

fn run(cmd: &str, root: &Path) -> Result<covforge_core::domain::FeedbackObservation, SimError> {
    let sim = config(cmd, root).build(Arc::new(Budget::new(10).unwrap())).unwrap();
    sim.simulate(&repo(), &Testbench::new("initial begin end"))
}

fn tree(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.insert(p);
        }
    }
    out
}

const REPORT: &str = r#"printf '{"metrics":{"line":{"covered":3,"total":4},"branch":{"covered":1,"total":2}}}' > {work_dir}/coverage.json"#;

#[test]
fn success_reads_normalized_report() {
    let root = tempfile::tempdir().unwrap();
    let cmd = format!("test -f {{repo_dir}}/rtl/top.sv && test -f {{testbench_path}} && {REPORT}");
    let obs = run(&cmd, root.path()).unwrap();
    assert_eq!(obs.status, SimStatus::Success);
    assert_eq!(obs.metrics["line"].covered, 3);
    assert_eq!(covforge_core::domain::coverage_score(&obs), (0.75 + 0.5) / 2.0);
}

#[test]
fn exit_zero_without_report_is_runtime_error() {
    let root = tempfile::tempdir().unwrap();
    let obs = run("echo {repo_dir} {testbench_path}", root.path()).unwrap();
    assert_eq!(obs.status, SimStatus::RuntimeError);
}

#[test]
fn compile_marker_and_plain_failure() {
    let root = tempfile::tempdir().unwrap();
    let obs = run("echo '*E,UNDEF: x' >&2; ls {repo_dir} {testbench_path} >/dev/null; exit 1", root.path()).unwrap();
    assert_eq!(obs.status, SimStatus::CompileError);
    assert!(obs.log.contains("*E,UNDEF"));
    let obs = run("ls {repo_dir} {testbench_path} >/dev/null; exit 3", root.path()).unwrap();
    assert_eq!(obs.status, SimStatus::RuntimeError);
}

#[test]
fn custom_markers() {
    let root = tempfile::tempdir().unwrap();
    let mut c = config("echo 'Error-[SE] syntax' ; : {repo_dir} {testbench_path}; exit 1", root.path());
    c.compile_error_markers = vec!["Error-[".into()];
    let sim = c.build(Arc::new(Budget::new(1).unwrap())).unwrap();
    let obs = sim.simulate(&repo(), &Testbench::new("x")).unwrap();
    assert_eq!(obs.status, SimStatus::CompileError);
}

#[test]
fn timeout_kills_the_command() {
    let root = tempfile::tempdir().unwrap();
    let mut c = config("sleep 5; : {repo_dir} {testbench_path}", root.path());
    c.timeout_seconds = 0.2;
    let sim = c.build(Arc::new(Budget::new(1).unwrap())).unwrap();
    let start = std::time::Instant::now();
    let obs = sim.simulate(&repo(), &Testbench::new("x")).unwrap();
    assert_eq!(obs.status, SimStatus::Timeout);
    assert!(start.elapsed() < Duration::from_secs(4));
}

#[test]
fn missing_tool_is_backend_unavailable() {
    let root = tempfile::tempdir().unwrap();
    let err = run("definitely-not-a-simulator-xyz {repo_dir} {testbench_path}", root.path()).unwrap_err();
    assert!(matches!(err, SimError::BackendUnavailable(_)));
}

#[test]
fn writes_stay_inside_the_work_dir() {
    let outer = tempfile::tempdir().unwrap();
    let root = outer.path().join("work");
    std::fs::create_dir_all(&root).unwrap();
    std::fs::write(outer.path().join("sentinel"), "keep").unwrap();
    let before = tree(outer.path());
    let cmd = format!("touch {{work_dir}}/scratch.log {{repo_dir}}/extra && : {{testbench_path}} && {REPORT}");
    let obs = run(&cmd, &root).unwrap();
    assert_eq!(obs.status, SimStatus::Success);
    // The per-call directory is removed afterwards, so nothing new survives.
    assert_eq!(tree(outer.path()), before);
}

#[test]
fn each_call_costs_one_unit() {
    let root = tempfile::tempdir().unwrap();
    let budget = Arc::new(Budget::new(2).unwrap());
    let sim = config(&format!(": {{repo_dir}} {{testbench_path}}; {REPORT}"), root.path())
        .build(budget.clone())
        .unwrap();
    sim.simulate(&repo(), &Testbench::new("a")).unwrap();
    sim.simulate(&repo(), &Testbench::new("b")).unwrap();
    assert!(matches!(sim.simulate(&repo(), &Testbench::new("c")), Err(SimError::BudgetExhausted)));
    assert_eq!(budget.used(), 2);
}

#[test]
fn bad_command_templates_rejected() {
    assert!(SimulatorConfig::process("run.sh {repo_dir}").validate().is_err());
    let mut c = SimulatorConfig::process("run {repo_dir} {testbench_path}");
    c.timeout_seconds = 0.0;
    assert!(c.validate().is_err());
}
