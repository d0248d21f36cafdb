// SPDX-License-Identifier: Apache-2.0

//! Simulator bridge: runs testbenches through a pluggable backend, normalizes
//! results into [`FeedbackObservation`] and charges every run to a shared
//! [`Budget`].

mod budget;
mod process;
mod report;
mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use budget::{Budget, BudgetSnapshot, ZeroBudget};
pub use process::{ProcessBackend, WORKDIR_ENV};
pub use report::{parse_coverage_report, MalformedReport, ParsedReport, ReportFormat};
pub use synthetic::{synthetic_rules, DesignError, SyntheticDesign, BINS_METRIC, DESIGN_FILE};

use crate::domain::{FeedbackObservation, Repository, Testbench, DEFAULT_LOG_CAP_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("simulator budget exhausted")]
    BudgetExhausted,
    #[error("simulator backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("refusing to simulate an empty testbench")]
    EmptyTestbench,
    #[error("synthetic design: {0}")]
    Design(#[from] DesignError),
    #[error("io error at {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("process backend needs a command containing {{repo_dir}} and {{testbench_path}}")]
    BadCommand,
    #[error("timeout_s must be positive")]
    BadTimeout,
    #[error("workers must be at least 1")]
    BadWorkers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimBackendKind {
    Process,
    #[default]
    Synthetic,
}

fn default_timeout() -> f64 {
    600.0
}
fn default_report_path() -> String {
    "{work_dir}/coverage.json".into()
}
fn default_markers() -> Vec<String> {
    vec!["*E,".into()]
}
fn default_log_cap() -> usize {
    DEFAULT_LOG_CAP_BYTES
}
fn default_workers() -> usize {
    1
}
fn default_design_file() -> String {
    DESIGN_FILE.into()
}

/// `[simulator]` section of a job config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    #[serde(default)]
    pub backend: SimBackendKind,
    #[serde(rename = "command", default)]
    pub command_template: String,
    #[serde(rename = "timeout_s", default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(rename = "report_path", default = "default_report_path")]
    pub coverage_report_path_template: String,
    #[serde(default = "default_markers")]
    pub compile_error_markers: Vec<String>,
    #[serde(default = "default_log_cap")]
    pub log_cap_bytes: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_design_file")]
    pub design_file: String,
    #[serde(skip)]
    pub work_root: Option<PathBuf>,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl SimulatorConfig {
    pub fn synthetic() -> Self {
        Self {
            backend: SimBackendKind::Synthetic,
            command_template: String::new(),
            timeout_seconds: default_timeout(),
            coverage_report_path_template: default_report_path(),
            compile_error_markers: default_markers(),
            log_cap_bytes: default_log_cap(),
            workers: default_workers(),
            design_file: default_design_file(),
            work_root: None,
        }
    }

    pub fn process(command: impl Into<String>) -> Self {
        Self {
            backend: SimBackendKind::Process,
            command_template: command.into(),
            ..Self::synthetic()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.timeout_seconds > 0.0 && self.timeout_seconds.is_finite()) {
            return Err(ConfigError::BadTimeout);
        }
        if self.workers == 0 {
            return Err(ConfigError::BadWorkers);
        }
        if self.backend == SimBackendKind::Process
            && !(self.command_template.contains("{repo_dir}")
                && self.command_template.contains("{testbench_path}"))
        {
            return Err(ConfigError::BadCommand);
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn SimBackend>, ConfigError> {
        self.validate()?;
        Ok(match self.backend {
            SimBackendKind::Synthetic => Arc::new(SyntheticBackend {
                design_file: self.design_file.clone(),
            }),
            SimBackendKind::Process => Arc::new(ProcessBackend {
                command_template: self.command_template.clone(),
                report_path_template: self.coverage_report_path_template.clone(),
                timeout: Duration::from_secs_f64(self.timeout_seconds),
                compile_error_markers: self.compile_error_markers.clone(),
                work_root: self.work_root.clone(),
            }),
        })
    }

    pub fn build(&self, budget: Arc<Budget>) -> Result<Simulator, ConfigError> {
        Ok(Simulator::new(self.build_backend()?, budget).with_log_cap(self.log_cap_bytes))
    }
}

/// One way of executing a testbench. Implementations must not consult the
/// budget; [`Simulator`] charges it.
pub trait SimBackend: Send + Sync {
    fn name(&self) -> &str;
    fn execute(&self, repo: &Repository, testbench: &Testbench) -> Result<FeedbackObservation, SimError>;
}

/// Looks up the repository's design file and applies [`synthetic_rules`].
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    pub design_file: String,
}

impl Default for SyntheticBackend {
    fn default() -> Self {
        Self {
            design_file: DESIGN_FILE.into(),
        }
    }
}

impl SimBackend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn execute(&self, repo: &Repository, testbench: &Testbench) -> Result<FeedbackObservation, SimError> {
        let design = SyntheticDesign::from_repo(repo, &self.design_file)?;
        Ok(synthetic_rules(&design, &testbench.text))
    }
}

/// `Sim(R, x)` bound to a budget.
#[derive(Clone)]
pub struct Simulator {
    backend: Arc<dyn SimBackend>,
    budget: Arc<Budget>,
    log_cap: usize,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("backend", &self.backend.name())
            .field("budget", &self.budget)
            .finish()
    }
}

impl Simulator {
    pub fn new(backend: Arc<dyn SimBackend>, budget: Arc<Budget>) -> Self {
        Self {
            backend,
            budget,
            log_cap: DEFAULT_LOG_CAP_BYTES,
        }
    }

    pub fn synthetic(budget: Arc<Budget>) -> Self {
        Self::new(Arc::new(SyntheticBackend::default()), budget)
    }

    pub fn with_log_cap(mut self, cap: usize) -> Self {
        self.log_cap = cap;
        self
    }

    pub fn budget(&self) -> &Arc<Budget> {
        &self.budget
    }

    /// Runs one simulation, charging exactly one budget unit whatever the
    /// outcome. Nothing is charged when the budget is already spent.
    pub fn simulate(&self, repo: &Repository, testbench: &Testbench) -> Result<FeedbackObservation, SimError> {
        if testbench.is_empty() {
            return Err(SimError::EmptyTestbench);
        }
        if !self.budget.try_acquire(1) {
            return Err(SimError::BudgetExhausted);
        }
        let obs = self.backend.execute(repo, testbench)?;
        Ok(obs.with_log_cap(self.log_cap))
    }
}

/// Convenience wrapper with the operation's flat signature.
pub fn simulate(
    repo: &Repository,
    testbench: &Testbench,
    config: &SimulatorConfig,
    budget: Arc<Budget>,
) -> Result<FeedbackObservation, SimError> {
    let sim = config
        .build(budget)
        .map_err(|e| SimError::BackendUnavailable(e.to_string()))?;
    sim.simulate(repo, testbench)
}
