// SPDX-License-Identifier: Apache-2.0

//! External simulator adapter: materializes the repository and testbench
//! into a private work directory, runs a shell command, and classifies the
//! outcome.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::report::{parse_coverage_report, ReportFormat};
use super::{SimBackend, SimError};
use crate::domain::{FeedbackObservation, Repository, SimStatus, Testbench};

/// Environment variable naming the scratch root for work directories.
pub const WORKDIR_ENV: &str = "COVFORGE_WORKDIR";

const TESTBENCH_FILE: &str = "testbench.sv";
const REPO_SUBDIR: &str = "repo";
const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ProcessBackend {
    pub command_template: String,
    pub report_path_template: String,
    pub timeout: Duration,
    pub compile_error_markers: Vec<String>,
    /// Parent directory for per-call work directories. Falls back to
    /// `COVFORGE_WORKDIR`, then the system temp dir.
    pub work_root: Option<PathBuf>,
}

struct Expanded {
    command: String,
    report: PathBuf,
}

impl ProcessBackend {
    fn work_root(&self) -> PathBuf {
        self.work_root
            .clone()
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(std::env::temp_dir)
    }

    fn expand(&self, work_dir: &Path) -> Expanded {
        let repo_dir = work_dir.join(REPO_SUBDIR);
        let tb = work_dir.join(TESTBENCH_FILE);
        let sub = |t: &str| {
            t.replace("{repo_dir}", &repo_dir.to_string_lossy())
                .replace("{testbench_path}", &tb.to_string_lossy())
                .replace("{work_dir}", &work_dir.to_string_lossy())
        };
        Expanded {
            command: sub(&self.command_template),
            report: PathBuf::from(sub(&self.report_path_template)),
        }
    }

    fn materialize(&self, work_dir: &Path, repo: &Repository, tb: &Testbench) -> std::io::Result<()> {
        let repo_dir = work_dir.join(REPO_SUBDIR);
        for (rel, content) in &repo.files {
            let path = repo_dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, content)?;
        }
        fs::create_dir_all(&repo_dir)?;
        fs::write(work_dir.join(TESTBENCH_FILE), &tb.text)
    }

    fn classify(&self, exit: Option<i32>, output: String, report: &Path) -> Result<FeedbackObservation, SimError> {
        match exit {
            Some(0) => match fs::read_to_string(report) {
                Ok(text) => match parse_coverage_report(&text, ReportFormat::NormalizedJson) {
                    Ok(parsed) => {
                        let mut log = output;
                        for w in parsed.warnings {
                            log.push_str("\n[covforge] ");
                            log.push_str(&w);
                        }
                        Ok(FeedbackObservation::success(parsed.metrics, log)
                            .expect("parser enforces covered <= total"))
                    }
                    Err(e) => Ok(FeedbackObservation::failure(
                        SimStatus::RuntimeError,
                        format!("{output}\n[covforge] {e}\n{text}"),
                    )),
                },
                Err(_) => Ok(FeedbackObservation::failure(
                    SimStatus::RuntimeError,
                    format!("{output}\n[covforge] no coverage report at {}", report.display()),
                )),
            },
            Some(127) => Err(SimError::BackendUnavailable(format!(
                "command not found: {}",
                output.trim()
            ))),
            _ => {
                let status = if self
                    .compile_error_markers
                    .iter()
                    .any(|m| !m.is_empty() && output.contains(m.as_str()))
                {
                    SimStatus::CompileError
                } else {
                    SimStatus::RuntimeError
                };
                Ok(FeedbackObservation::failure(status, output))
            }
        }
    }
}

impl SimBackend for ProcessBackend {
    fn name(&self) -> &str {
        "process"
    }

    fn execute(&self, repo: &Repository, testbench: &Testbench) -> Result<FeedbackObservation, SimError> {
        let root = self.work_root();
        fs::create_dir_all(&root).map_err(|e| SimError::Io(root.display().to_string(), e.to_string()))?;
        let work = tempfile::Builder::new()
            .prefix("covforge-sim-")
            .tempdir_in(&root)
            .map_err(|e| SimError::Io(root.display().to_string(), e.to_string()))?;
        self.materialize(work.path(), repo, testbench)
            .map_err(|e| SimError::Io(work.path().display().to_string(), e.to_string()))?;
        let expanded = self.expand(work.path());

        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&expanded.command)
            .current_dir(work.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SimError::BackendUnavailable(format!("spawn failed: {e}")))?;

        let drain = |mut r: Box<dyn Read + Send>| {
            thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = r.read_to_end(&mut buf);
                buf
            })
        };
        let out = drain(Box::new(child.stdout.take().expect("piped stdout")));
        let err = drain(Box::new(child.stderr.take().expect("piped stderr")));

        let start = Instant::now();
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    timed_out = true;
                    break None;
                }
                Ok(None) => thread::sleep(POLL_INTERVAL),
                Err(e) => return Err(SimError::BackendUnavailable(format!("wait failed: {e}"))),
            }
        };
        // A killed shell can leave grandchildren holding the pipes open; only
        // join the readers when the command exited on its own.
        let mut output = String::new();
        if !timed_out {
            output.push_str(&String::from_utf8_lossy(&out.join().unwrap_or_default()));
            output.push_str(&String::from_utf8_lossy(&err.join().unwrap_or_default()));
        }

        if timed_out {
            return Ok(FeedbackObservation::failure(
                SimStatus::Timeout,
                format!(
                    "[covforge] wall-clock limit of {:.3}s exceeded",
                    self.timeout.as_secs_f64()
                ),
            ));
        }
        let exit = status.and_then(|s| s.code());
        self.classify(exit, output, &expanded.report)
    }
}
