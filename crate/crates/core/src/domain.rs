// SPDX-License-Identifier: Apache-2.0

//! Domain types shared by every stage of the pipeline: repositories,
//! testbenches, simulator observations, memoryless states and transition
//! records, plus the coverage scalarization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Component, Path};
use std::sync::Arc;

use serde::{Deserialize, Serialize, Serializer};

/// Default cap on the stored simulator log, in bytes.
pub const DEFAULT_LOG_CAP_BYTES: usize = 64 * 1024;

const ELISION_MARKER: &str = "\n[... log truncated ...]\n";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("repository id must be nonempty")]
    EmptyRepoId,
    #[error("repository `{0}` has no files")]
    NoFiles(String),
    #[error("repository `{repo}`: invalid file path `{path}` (must be relative without `..`)")]
    BadPath { repo: String, path: String },
    #[error("repository `{repo}`: pass_threshold {value} outside (0, 1]")]
    BadThreshold { repo: String, value: f64 },
    #[error("repository `{repo}`: context_length {stored} does not match recomputed {actual}")]
    ContextLengthMismatch {
        repo: String,
        stored: usize,
        actual: usize,
    },
    #[error("metric `{name}`: covered {covered} exceeds total {total}")]
    CoveredExceedsTotal { name: String, covered: u64, total: u64 },
    #[error("metric `{0}`: total must be positive")]
    ZeroTotal(String),
    #[error("observation with status {0} must not carry coverage metrics")]
    MetricsWithoutSuccess(SimStatus),
    #[error("null observation must have empty metrics and log")]
    DirtyNullObservation,
    #[error("state invariant violated: empty testbench requires a not_run observation")]
    EmptyTestbenchWithObservation,
    #[error("state invariant violated: nonempty testbench requires a simulator observation")]
    TestbenchWithoutObservation,
}

/// A fixed hardware design repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RepositoryWire")]
pub struct Repository {
    pub id: String,
    pub files: BTreeMap<String, String>,
    pub pass_threshold: f64,
    pub context_length: usize,
}

#[derive(Deserialize)]
struct RepositoryWire {
    id: String,
    files: BTreeMap<String, String>,
    pass_threshold: f64,
    #[serde(default)]
    context_length: Option<usize>,
}

impl TryFrom<RepositoryWire> for Repository {
    type Error = DomainError;

    fn try_from(w: RepositoryWire) -> Result<Self, Self::Error> {
        let repo = Repository::new(w.id, w.files, w.pass_threshold)?;
        if let Some(stored) = w.context_length {
            if stored != repo.context_length {
                return Err(DomainError::ContextLengthMismatch {
                    repo: repo.id,
                    stored,
                    actual: repo.context_length,
                });
            }
        }
        Ok(repo)
    }
}

impl Repository {
    pub fn new(
        id: impl Into<String>,
        files: BTreeMap<String, String>,
        pass_threshold: f64,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptyRepoId);
        }
        if files.is_empty() {
            return Err(DomainError::NoFiles(id));
        }
        for path in files.keys() {
            if !is_clean_relative(path) {
                return Err(DomainError::BadPath {
                    repo: id,
                    path: path.clone(),
                });
            }
        }
        if !(pass_threshold > 0.0 && pass_threshold <= 1.0) {
            return Err(DomainError::BadThreshold {
                repo: id,
                value: pass_threshold,
            });
        }
        let context_length = count_tokens(files.values().map(String::as_str));
        Ok(Self {
            id,
            files,
            pass_threshold,
            context_length,
        })
    }

    /// Returns a copy with a different pass threshold.
    pub fn with_pass_threshold(&self, pass_threshold: f64) -> Result<Self, DomainError> {
        Self::new(self.id.clone(), self.files.clone(), pass_threshold)
    }
}

fn is_clean_relative(path: &str) -> bool {
    if path.is_empty() {
        return false;
    }
    Path::new(path)
        .components()
        .all(|c| matches!(c, Component::Normal(_)))
}

/// Whitespace-delimited token count over a set of file contents. Files are
/// counted independently so tokens never merge across file boundaries.
pub fn count_tokens<'a>(texts: impl IntoIterator<Item = &'a str>) -> usize {
    texts
        .into_iter()
        .map(|t| t.split_whitespace().count())
        .sum()
}

/// The full testbench file at one step. The empty string is the initial
/// placeholder.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Testbench {
    pub text: String,
}

impl Testbench {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    NotRun,
    CompileError,
    RuntimeError,
    Timeout,
    Success,
}

impl SimStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SimStatus::NotRun => "not_run",
            SimStatus::CompileError => "compile_error",
            SimStatus::RuntimeError => "runtime_error",
            SimStatus::Timeout => "timeout",
            SimStatus::Success => "success",
        }
    }
}

impl fmt::Display for SimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCount {
    pub covered: u64,
    pub total: u64,
}

impl MetricCount {
    pub fn ratio(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }
}

pub type Metrics = BTreeMap<String, MetricCount>;

/// Simulator outcome normalized across backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservationWire")]
pub struct FeedbackObservation {
    pub status: SimStatus,
    pub metrics: Metrics,
    pub log: String,
}

#[derive(Deserialize)]
struct ObservationWire {
    status: SimStatus,
    #[serde(default)]
    metrics: Metrics,
    #[serde(default)]
    log: String,
}

impl TryFrom<ObservationWire> for FeedbackObservation {
    type Error = DomainError;

    fn try_from(w: ObservationWire) -> Result<Self, Self::Error> {
        FeedbackObservation::new(w.status, w.metrics, w.log)
    }
}

impl FeedbackObservation {
    pub fn new(status: SimStatus, metrics: Metrics, log: String) -> Result<Self, DomainError> {
        for (name, m) in &metrics {
            if m.total == 0 {
                return Err(DomainError::ZeroTotal(name.clone()));
            }
            if m.covered > m.total {
                return Err(DomainError::CoveredExceedsTotal {
                    name: name.clone(),
                    covered: m.covered,
                    total: m.total,
                });
            }
        }
        if !metrics.is_empty() && status != SimStatus::Success {
            return Err(DomainError::MetricsWithoutSuccess(status));
        }
        if status == SimStatus::NotRun && !log.is_empty() {
            return Err(DomainError::DirtyNullObservation);
        }
        Ok(Self {
            status,
            metrics,
            log,
        })
    }

    /// The null observation `o_0`.
    pub fn null() -> Self {
        Self {
            status: SimStatus::NotRun,
            metrics: Metrics::new(),
            log: String::new(),
        }
    }

    /// A failed run (compile, runtime or timeout) with its log.
    pub fn failure(status: SimStatus, log: impl Into<String>) -> Self {
        assert!(
            !matches!(status, SimStatus::Success | SimStatus::NotRun),
            "failure() requires a failing status"
        );
        Self {
            status,
            metrics: Metrics::new(),
            log: log.into(),
        }
    }

    pub fn success(metrics: Metrics, log: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(SimStatus::Success, metrics, log.into())
    }

    pub fn is_null(&self) -> bool {
        self.status == SimStatus::NotRun
    }

    /// Caps the log at `cap` bytes by eliding its middle.
    pub fn with_log_cap(mut self, cap: usize) -> Self {
        self.log = truncate_log(&self.log, cap);
        self
    }
}

/// Middle-truncates `log` to at most `cap` bytes (marker included), keeping
/// the head and tail on char boundaries.
pub fn truncate_log(log: &str, cap: usize) -> String {
    if log.len() <= cap {
        return log.to_string();
    }
    if cap <= ELISION_MARKER.len() {
        let mut end = cap;
        while !log.is_char_boundary(end) {
            end -= 1;
        }
        return log[..end].to_string();
    }
    let keep = cap - ELISION_MARKER.len();
    let mut head = keep / 2;
    while !log.is_char_boundary(head) {
        head -= 1;
    }
    let mut tail = log.len() - (keep - keep / 2);
    while !log.is_char_boundary(tail) {
        tail += 1;
    }
    let mut out = String::with_capacity(cap);
    out.push_str(&log[..head]);
    out.push_str(ELISION_MARKER);
    out.push_str(&log[tail..]);
    out
}

/// Scalarizes a metrics map into `[0, 1]`. Only consulted for successful runs.
pub trait CoverageRule: Send + Sync {
    fn name(&self) -> &str;
    fn aggregate(&self, metrics: &Metrics) -> f64;
}

/// Unweighted arithmetic mean of per-metric covered/total ratios.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanRatio;

impl CoverageRule for MeanRatio {
    fn name(&self) -> &str {
        "mean_ratio"
    }

    fn aggregate(&self, metrics: &Metrics) -> f64 {
        if metrics.is_empty() {
            return 0.0;
        }
        let sum: f64 = metrics.values().map(MetricCount::ratio).sum();
        sum / metrics.len() as f64
    }
}

/// Weighted mean of per-metric ratios; metrics without a weight get 1.0.
#[derive(Debug, Clone, Default)]
pub struct WeightedRatio {
    pub weights: BTreeMap<String, f64>,
}

impl CoverageRule for WeightedRatio {
    fn name(&self) -> &str {
        "weighted_ratio"
    }

    fn aggregate(&self, metrics: &Metrics) -> f64 {
        let (num, den) = metrics.iter().fold((0.0, 0.0), |(num, den), (k, m)| {
            let w = self.weights.get(k).copied().unwrap_or(1.0).max(0.0);
            (num + w * m.ratio(), den + w)
        });
        if den == 0.0 {
            0.0
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    }
}

pub fn coverage_score_with(rule: &dyn CoverageRule, observation: &FeedbackObservation) -> f64 {
    if observation.status != SimStatus::Success {
        return 0.0;
    }
    rule.aggregate(&observation.metrics)
}

/// `Cov(o)`: zero for any non-successful run, otherwise the mean ratio.
pub fn coverage_score(observation: &FeedbackObservation) -> f64 {
    coverage_score_with(&MeanRatio, observation)
}

/// Memoryless state `(R, x_t, o_t)` with its cached coverage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    #[serde(serialize_with = "serialize_repo_ref")]
    pub repo: Arc<Repository>,
    pub testbench: Testbench,
    pub observation: FeedbackObservation,
    pub coverage: f64,
}

fn serialize_repo_ref<S: Serializer>(repo: &Arc<Repository>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&repo.id)
}

/// `s_0 = (R, empty, o_0)`.
pub fn make_initial_state(repo: Arc<Repository>) -> State {
    State {
        repo,
        testbench: Testbench::empty(),
        observation: FeedbackObservation::null(),
        coverage: 0.0,
    }
}

pub fn make_state(
    repo: Arc<Repository>,
    testbench: Testbench,
    observation: FeedbackObservation,
) -> Result<State, DomainError> {
    match (testbench.is_empty(), observation.is_null()) {
        (true, false) => return Err(DomainError::EmptyTestbenchWithObservation),
        (false, true) => return Err(DomainError::TestbenchWithoutObservation),
        _ => {}
    }
    let coverage = coverage_score(&observation);
    Ok(State {
        repo,
        testbench,
        observation,
        coverage,
    })
}

impl State {
    pub fn is_initial(&self) -> bool {
        self.testbench.is_empty()
    }

    pub fn repo_id(&self) -> &str {
        &self.repo.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceType {
    FullTeacher,
    Imitation,
    SelfSampling,
}

impl TraceType {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceType::FullTeacher => "full_teacher",
            TraceType::Imitation => "imitation",
            TraceType::SelfSampling => "self_sampling",
        }
    }
}

impl fmt::Display for TraceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Direct,
    Agentic,
}

impl GenerationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Direct => "direct",
            GenerationMode::Agentic => "agentic",
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage_index: u32,
    pub trace_type: TraceType,
    pub mode: GenerationMode,
    /// Model that produced `generated`.
    pub generator_id: String,
    /// Model that produced the source state's testbench; `None` for `s_0`.
    pub source_generator_id: Option<String>,
    pub sampler_seed: u64,
    pub specialist_prompt_used: bool,
}

/// Supervision pair `(s_t, x_{t+1})` with its simulated outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionRecord {
    pub source: State,
    pub generated: Testbench,
    pub result: FeedbackObservation,
    pub delta_cov: f64,
    pub provenance: Provenance,
}

/// Provenance fields a caller supplies; `mode` is derived from the source.
#[derive(Debug, Clone)]
pub struct ProvenanceInput {
    pub stage_index: u32,
    pub trace_type: TraceType,
    pub generator_id: String,
    pub source_generator_id: Option<String>,
    pub sampler_seed: u64,
    pub specialist_prompt_used: bool,
}

impl TransitionRecord {
    pub fn new(
        source: State,
        generated: Testbench,
        result: FeedbackObservation,
        provenance: ProvenanceInput,
    ) -> Self {
        let delta_cov = coverage_score(&result) - source.coverage;
        let mode = if source.is_initial() {
            GenerationMode::Direct
        } else {
            GenerationMode::Agentic
        };
        Self {
            source,
            generated,
            result,
            delta_cov,
            provenance: Provenance {
                stage_index: provenance.stage_index,
                trace_type: provenance.trace_type,
                mode,
                generator_id: provenance.generator_id,
                source_generator_id: provenance.source_generator_id,
                sampler_seed: provenance.sampler_seed,
                specialist_prompt_used: provenance.specialist_prompt_used,
            },
        }
    }

    pub fn final_coverage(&self) -> f64 {
        coverage_score(&self.result)
    }

    pub fn mode(&self) -> GenerationMode {
        self.provenance.mode
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn repo(id: &str) -> Arc<Repository> {
        let mut files = BTreeMap::new();
        files.insert("rtl/top.sv".to_string(), "module top; endmodule".to_string());
        Arc::new(Repository::new(id, files, 0.5).unwrap())
    }

    fn metrics(entries: &[(&str, u64, u64)]) -> Metrics {
        entries
            .iter()
            .map(|(n, c, t)| {
                (
                    n.to_string(),
                    MetricCount {
                        covered: *c,
                        total: *t,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn null_observation_scores_zero() {
        assert_eq!(coverage_score(&FeedbackObservation::null()), 0.0);
    }

    #[test]
    fn compile_error_scores_zero() {
        let o = FeedbackObservation::failure(SimStatus::CompileError, "*E,SYNTAX");
        assert_eq!(coverage_score(&o), 0.0);
    }

    #[test]
    fn mean_of_metric_ratios() {
        let o = FeedbackObservation::success(metrics(&[("branch", 3, 4), ("toggle", 1, 2)]), "")
            .unwrap();
        assert_eq!(coverage_score(&o), 0.625);
    }

    #[test]
    fn success_without_metrics_scores_zero() {
        let o = FeedbackObservation::success(Metrics::new(), "no db").unwrap();
        assert_eq!(coverage_score(&o), 0.0);
    }

    #[test]
    fn observation_invariants() {
        assert!(matches!(
            FeedbackObservation::new(SimStatus::Success, metrics(&[("l", 5, 4)]), String::new()),
            Err(DomainError::CoveredExceedsTotal { .. })
        ));
        assert!(matches!(
            FeedbackObservation::new(SimStatus::Success, metrics(&[("l", 0, 0)]), String::new()),
            Err(DomainError::ZeroTotal(_))
        ));
        assert!(matches!(
            FeedbackObservation::new(
                SimStatus::RuntimeError,
                metrics(&[("l", 1, 4)]),
                String::new()
            ),
            Err(DomainError::MetricsWithoutSuccess(_))
        ));
        assert!(FeedbackObservation::new(SimStatus::NotRun, Metrics::new(), "x".into()).is_err());
    }

    #[test]
    fn repository_validation() {
        let mut files = BTreeMap::new();
        assert!(matches!(
            Repository::new("r", files.clone(), 0.5),
            Err(DomainError::NoFiles(_))
        ));
        files.insert("../etc/passwd".into(), "x".into());
        assert!(matches!(
            Repository::new("r", files.clone(), 0.5),
            Err(DomainError::BadPath { .. })
        ));
        files.clear();
        files.insert("/abs".into(), "x".into());
        assert!(Repository::new("r", files.clone(), 0.5).is_err());
        files.clear();
        files.insert("a.sv".into(), "one two\nthree".into());
        files.insert("b.sv".into(), "four".into());
        assert!(Repository::new("", files.clone(), 0.5).is_err());
        assert!(Repository::new("r", files.clone(), 0.0).is_err());
        assert!(Repository::new("r", files.clone(), 1.5).is_err());
        let r = Repository::new("r", files, 1.0).unwrap();
        assert_eq!(r.context_length, 4);
    }

    #[test]
    fn repository_json_checks_context_length() {
        let ok = r#"{"id":"r","files":{"a.sv":"x y"},"pass_threshold":0.5,"context_length":2}"#;
        let r: Repository = serde_json::from_str(ok).unwrap();
        assert_eq!(r.context_length, 2);
        let bad = r#"{"id":"r","files":{"a.sv":"x y"},"pass_threshold":0.5,"context_length":3}"#;
        assert!(serde_json::from_str::<Repository>(bad).is_err());
        let missing = r#"{"id":"r","files":{"a.sv":"x y z"},"pass_threshold":0.5}"#;
        assert_eq!(
            serde_json::from_str::<Repository>(missing)
                .unwrap()
                .context_length,
            3
        );
    }

    #[test]
    fn initial_state() {
        let r = repo("a");
        let s = make_initial_state(r.clone());
        assert_eq!(s.coverage, 0.0);
        assert_eq!(s.observation.status, SimStatus::NotRun);
        assert_eq!(s, make_initial_state(r));
    }

    #[test]
    fn make_state_rules() {
        let r = repo("a");
        let ok = FeedbackObservation::success(metrics(&[("line", 1, 1)]), "").unwrap();
        let s = make_state(r.clone(), Testbench::new("module tb; endmodule"), ok.clone()).unwrap();
        assert_eq!(s.coverage, 1.0);
        assert_eq!(
            make_state(r.clone(), Testbench::empty(), ok),
            Err(DomainError::EmptyTestbenchWithObservation)
        );
        let s = make_state(
            r.clone(),
            Testbench::new("x"),
            FeedbackObservation::failure(SimStatus::CompileError, ""),
        )
        .unwrap();
        assert_eq!(s.coverage, 0.0);
        assert_eq!(
            make_state(r, Testbench::new("x"), FeedbackObservation::null()),
            Err(DomainError::TestbenchWithoutObservation)
        );
    }

    #[test]
    fn status_wire_names() {
        let names: Vec<String> = [
            SimStatus::NotRun,
            SimStatus::CompileError,
            SimStatus::RuntimeError,
            SimStatus::Timeout,
            SimStatus::Success,
        ]
        .iter()
        .map(|s| serde_json::to_string(s).unwrap())
        .collect();
        assert_eq!(
            names,
            [
                "\"not_run\"",
                "\"compile_error\"",
                "\"runtime_error\"",
                "\"timeout\"",
                "\"success\""
            ]
        );
    }

    #[test]
    fn state_serializes_repo_as_id() {
        let s = make_initial_state(repo("abc"));
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["repo"], "abc");
        assert_eq!(v["testbench"]["text"], "");
        assert_eq!(v["observation"]["status"], "not_run");
    }

    #[test]
    fn transition_mode_follows_source() {
        let r = repo("a");
        let prov = || ProvenanceInput {
            stage_index: 0,
            trace_type: TraceType::FullTeacher,
            generator_id: "t".into(),
            source_generator_id: None,
            sampler_seed: 1,
            specialist_prompt_used: false,
        };
        let ok = FeedbackObservation::success(metrics(&[("bins", 2, 4)]), "").unwrap();
        let d = TransitionRecord::new(
            make_initial_state(r.clone()),
            Testbench::new("a"),
            ok.clone(),
            prov(),
        );
        assert_eq!(d.mode(), GenerationMode::Direct);
        assert_eq!(d.delta_cov, 0.5);
        let src = make_state(r, Testbench::new("a"), ok.clone()).unwrap();
        let a = TransitionRecord::new(src, Testbench::new("a b"), ok, prov());
        assert_eq!(a.mode(), GenerationMode::Agentic);
        assert_eq!(a.delta_cov, 0.0);
    }

    #[test]
    fn log_truncation_keeps_ends() {
        let log = "a".repeat(100) + &"b".repeat(100);
        let t = truncate_log(&log, 80);
        assert!(t.len() <= 80);
        assert!(t.starts_with('a') && t.ends_with('b'));
        assert!(t.contains("truncated"));
        assert_eq!(truncate_log("short", 80), "short");
        let multibyte = "é".repeat(100);
        let t = truncate_log(&multibyte, 51);
        assert!(t.len() <= 51);
    }

    #[test]
    fn weighted_rule() {
        let m = metrics(&[("branch", 1, 2), ("line", 1, 1)]);
        let mut rule = WeightedRatio::default();
        rule.weights.insert("line".into(), 3.0);
        assert!((rule.aggregate(&m) - (0.5 + 3.0) / 4.0).abs() < 1e-15);
    }

    fn arb_observation() -> impl Strategy<Value = FeedbackObservation> {
        let metric = (1u64..1000).prop_flat_map(|t| (0..=t, Just(t)));
        let metrics = proptest::collection::btree_map("[a-z]{1,6}", metric, 0..6);
        (
            prop_oneof![
                Just(SimStatus::CompileError),
                Just(SimStatus::RuntimeError),
                Just(SimStatus::Timeout),
                Just(SimStatus::Success),
            ],
            metrics,
            ".{0,20}",
        )
            .prop_map(|(status, m, log)| {
                let m: Metrics = m
                    .into_iter()
                    .map(|(k, (c, t))| (k, MetricCount { covered: c, total: t }))
                    .collect();
                if status == SimStatus::Success {
                    FeedbackObservation::success(m, log).unwrap()
                } else {
                    FeedbackObservation::failure(status, log)
                }
            })
    }

    proptest! {
        #[test]
        fn coverage_in_unit_interval(o in arb_observation()) {
            let c = coverage_score(&o);
            prop_assert!((0.0..=1.0).contains(&c));
            if o.status != SimStatus::Success {
                prop_assert_eq!(c, 0.0);
            }
        }

        #[test]
        fn coverage_monotone_in_covered(o in arb_observation(), pick in 0usize..6) {
            prop_assume!(o.status == SimStatus::Success && !o.metrics.is_empty());
            let key = o.metrics.keys().nth(pick % o.metrics.len()).unwrap().clone();
            let mut bumped = o.metrics.clone();
            let m = bumped.get_mut(&key).unwrap();
            prop_assume!(m.covered < m.total);
            m.covered += 1;
            let o2 = FeedbackObservation::success(bumped, o.log.clone()).unwrap();
            prop_assert!(coverage_score(&o2) >= coverage_score(&o));
        }

        #[test]
        fn delta_cov_recomputes_exactly(a in arb_observation(), b in arb_observation()) {
            let r = repo("p");
            let src = make_state(r, Testbench::new("x"), a).unwrap();
            let rec = TransitionRecord::new(src, Testbench::new("y"), b, ProvenanceInput {
                stage_index: 1,
                trace_type: TraceType::Imitation,
                generator_id: "t".into(),
                source_generator_id: Some("s".into()),
                sampler_seed: 3,
                specialist_prompt_used: false,
            });
            prop_assert_eq!(rec.delta_cov, coverage_score(&rec.result) - rec.source.coverage);
            prop_assert!((-1.0..=1.0).contains(&rec.delta_cov));
        }

        #[test]
        fn observation_json_roundtrip(o in arb_observation()) {
            let s = serde_json::to_string(&o).unwrap();
            let back: FeedbackObservation = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, o);
        }
    }
}
