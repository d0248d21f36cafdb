// SPDX-License-Identifier: Apache-2.0

//! Student-grounded trajectory synthesis.
//!
//! Drafts are sampled from the intermediate model, simulated, and the
//! weakest states are handed to the transition model for corrective
//! rewrites. Only rewrites that raise coverage by at least `τ_Δ` survive,
//! one per selected state.

mod select;

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use select::{select_indices, select_states, SelectionPolicy, SelectionStrategy};

use crate::domain::{
    make_initial_state, make_state, DomainError, FeedbackObservation, ProvenanceInput, Repository,
    SimStatus, State, Testbench, TraceType, TransitionRecord,
};
use crate::genbridge::{extract_testbench, render_memoryless, GenError, Message, Model};
use crate::seeds::mix_seed;
use crate::simbridge::{SimError, Simulator};

/// Log attached to candidates whose extracted testbench is empty.
pub const EMPTY_CANDIDATE_LOG: &str = "empty testbench after extraction; not simulated";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("no candidate states to select from")]
    EmptyCandidates,
    #[error("simulator budget exhausted before any candidate was simulated")]
    BudgetExhausted,
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone)]
pub struct TraceConfig {
    pub intermediate_model: Model,
    pub transition_model: Model,
    pub trace_type: TraceType,
    pub trajectory_length: usize,
    pub candidates_per_state: usize,
    pub transitions_per_state: usize,
}

impl TraceConfig {
    /// Assigns teacher and student to `M_int` / `M_trans` per trace type.
    pub fn from_roles(
        trace_type: TraceType,
        teacher: &Model,
        student: &Model,
        trajectory_length: usize,
        candidates_per_state: usize,
        transitions_per_state: usize,
    ) -> Self {
        let (intermediate, transition) = match trace_type {
            TraceType::FullTeacher => (teacher, teacher),
            TraceType::Imitation => (student, teacher),
            TraceType::SelfSampling => (student, student),
        };
        Self {
            intermediate_model: intermediate.clone(),
            transition_model: transition.clone(),
            trace_type,
            trajectory_length,
            candidates_per_state,
            transitions_per_state,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.trajectory_length == 0 {
            return Err(SynthError::Config("trajectory length N must be positive".into()));
        }
        if self.candidates_per_state == 0 || self.transitions_per_state == 0 {
            return Err(SynthError::Config("n_cand and n_trans must be positive".into()));
        }
        let same = self.intermediate_model.id() == self.transition_model.id();
        match self.trace_type {
            TraceType::Imitation if same => Err(SynthError::Config(
                "imitation traces need distinct student and teacher models".into(),
            )),
            TraceType::FullTeacher | TraceType::SelfSampling if !same => Err(SynthError::Config(
                format!("{} traces use one model for both roles", self.trace_type),
            )),
            _ => Ok(()),
        }
    }

    /// Checks the role assignment against named teacher and student ids.
    pub fn check_roles(&self, teacher_id: &str, student_id: &str) -> Result<(), SynthError> {
        self.validate()?;
        let (want_int, want_trans) = match self.trace_type {
            TraceType::FullTeacher => (teacher_id, teacher_id),
            TraceType::Imitation => (student_id, teacher_id),
            TraceType::SelfSampling => (student_id, student_id),
        };
        if self.intermediate_model.id() != want_int || self.transition_model.id() != want_trans {
            return Err(SynthError::Config(format!(
                "{} expects M_int={want_int}, M_trans={want_trans}",
                self.trace_type
            )));
        }
        Ok(())
    }
}

fn default_min_delta() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectionPolicy {
    #[serde(rename = "tau_delta", default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(rename = "min_absolute", default)]
    pub min_absolute_coverage: Option<f64>,
}

impl Default for RejectionPolicy {
    fn default() -> Self {
        Self {
            min_delta: default_min_delta(),
            min_absolute_coverage: None,
        }
    }
}

impl RejectionPolicy {
    pub fn stage0() -> Self {
        Self {
            min_delta: 0.01,
            min_absolute_coverage: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.min_delta) {
            return Err(SynthError::Config("tau_delta must lie in [0, 1]".into()));
        }
        if let Some(m) = self.min_absolute_coverage {
            if !(0.0..=1.0).contains(&m) {
                return Err(SynthError::Config("min_absolute must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn passes(&self, record: &TransitionRecord) -> bool {
        !record.generated.is_empty()
            && record.delta_cov >= self.min_delta
            && self
                .min_absolute_coverage
                .is_none_or(|m| record.final_coverage() >= m)
    }
}

/// Index of the passing record with the largest `delta_cov`; earliest wins ties.
pub fn best_passing_index(records: &[TransitionRecord], policy: &RejectionPolicy) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if policy.passes(r) && best.is_none_or(|b| r.delta_cov > records[b].delta_cov) {
            best = Some(i);
        }
    }
    best
}

pub fn rejection_filter<'a>(
    records: &'a [TransitionRecord],
    policy: &RejectionPolicy,
) -> Option<&'a TransitionRecord> {
    best_passing_index(records, policy).map(|i| &records[i])
}

/// One generation request as issued, for audit logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptLogEntry {
    pub repo_id: String,
    pub purpose: &'static str,
    pub generator_id: String,
    pub seed: u64,
    pub stage_index: u32,
    pub messages: Vec<Message>,
}

pub trait PromptSink: Send + Sync {
    fn record(&self, entry: PromptLogEntry);
}

/// Collects entries in memory; `into_sorted` gives a worker-independent order.
#[derive(Debug, Default)]
pub struct MemoryPromptLog {
    entries: Mutex<Vec<PromptLogEntry>>,
}

impl MemoryPromptLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_sorted(self) -> Vec<PromptLogEntry> {
        let mut v = self.entries.into_inner().unwrap();
        v.sort_by(|a, b| {
            (&a.repo_id, a.purpose, a.seed, &a.generator_id)
                .cmp(&(&b.repo_id, b.purpose, b.seed, &b.generator_id))
        });
        v
    }
}

impl PromptSink for MemoryPromptLog {
    fn record(&self, entry: PromptLogEntry) {
        self.entries.lock().unwrap().push(entry);
    }
}

/// Everything a synthesis call needs besides the repo and trace config.
#[derive(Clone)]
pub struct SynthContext {
    pub simulator: Simulator,
    pub stage_index: u32,
    pub specialist_prompt: Option<String>,
    pub prompt_sink: Option<Arc<dyn PromptSink>>,
}

impl SynthContext {
    pub fn new(simulator: Simulator, stage_index: u32) -> Self {
        Self {
            simulator,
            stage_index,
            specialist_prompt: None,
            prompt_sink: None,
        }
    }

    pub fn with_specialist(mut self, text: Option<String>) -> Self {
        self.specialist_prompt = text;
        self
    }

    pub fn with_prompt_sink(mut self, sink: Arc<dyn PromptSink>) -> Self {
        self.prompt_sink = Some(sink);
        self
    }

    fn generate(
        &self,
        model: &Model,
        state: &State,
        seed: u64,
        purpose: &'static str,
    ) -> Result<String, GenError> {
        let bundle = render_memoryless(state, self.specialist_prompt.as_deref());
        if let Some(sink) = &self.prompt_sink {
            sink.record(PromptLogEntry {
                repo_id: state.repo_id().to_string(),
                purpose,
                generator_id: model.id().to_string(),
                seed,
                stage_index: self.stage_index,
                messages: bundle.messages.clone(),
            });
        }
        model.generate(&bundle, seed)
    }
}

/// A simulated draft and who produced it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub state: State,
    pub generator_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub truncated: bool,
    pub simulator_calls: u64,
    pub empty_drafts: u64,
    pub generator_failures: u64,
}

impl CandidateSet {
    pub fn states(&self) -> Vec<State> {
        self.candidates.iter().map(|c| c.state.clone()).collect()
    }
}

enum Outcome {
    Simulated(Testbench, FeedbackObservation),
    Empty,
    GenFailed,
    Exhausted,
}

fn run_one(
    ctx: &SynthContext,
    model: &Model,
    from: &State,
    seed: u64,
    purpose: &'static str,
) -> Result<Outcome, SynthError> {
    let raw = match ctx.generate(model, from, seed, purpose) {
        Ok(raw) => raw,
        Err(GenError::EmptyCompletion) => return Ok(Outcome::Empty),
        Err(e @ GenError::Transport { .. }) => {
            tracing::warn!(repo = from.repo_id(), model = model.id(), "skipping candidate: {e}");
            return Ok(Outcome::GenFailed);
        }
        Err(e) => return Err(e.into()),
    };
    let tb = extract_testbench(&raw);
    if tb.is_empty() {
        return Ok(Outcome::Empty);
    }
    match ctx.simulator.simulate(&from.repo, &tb) {
        Ok(obs) => Ok(Outcome::Simulated(tb, obs)),
        Err(SimError::BudgetExhausted) => Ok(Outcome::Exhausted),
        Err(e) => Err(e.into()),
    }
}

/// Samples `n_cand` drafts from `from` with the intermediate model.
///
/// Drafts whose extracted testbench is empty are dropped without a
/// simulator call. Budget exhaustion yields a partial, truncated set.
pub fn sample_candidate_states(
    from: &State,
    config: &TraceConfig,
    ctx: &SynthContext,
    seed: u64,
) -> Result<CandidateSet, SynthError> {
    let model = &config.intermediate_model;
    let seeds: Vec<u64> = (0..config.candidates_per_state)
        .map(|i| mix_seed(seed, &format!("draft/{i}")))
        .collect();
    let outcomes: Vec<Result<Outcome, SynthError>> = seeds
        .par_iter()
        .map(|&s| run_one(ctx, model, from, s, "draft"))
        .collect();
    let mut set = CandidateSet::default();
    for (outcome, s) in outcomes.into_iter().zip(seeds) {
        match outcome? {
            Outcome::Simulated(tb, obs) => {
                set.simulator_calls += 1;
                set.candidates.push(Candidate {
                    state: make_state(from.repo.clone(), tb, obs)?,
                    generator_id: model.id().to_string(),
                    seed: s,
                });
            }
            Outcome::Empty => set.empty_drafts += 1,
            Outcome::GenFailed => set.generator_failures += 1,
            Outcome::Exhausted => set.truncated = true,
        }
    }
    if set.candidates.is_empty() && set.truncated {
        return Err(SynthError::BudgetExhausted);
    }
    Ok(set)
}

#[derive(Debug, Clone, Default)]
pub struct TransitionBatch {
    pub records: Vec<TransitionRecord>,
    pub truncated: bool,
    pub simulator_calls: u64,
    pub generator_failures: u64,
}

/// Samples `n_trans` rewrites of `state` with the transition model.
///
/// `source_generator_id` names the model that wrote the state's testbench
/// (`None` for `s_0`).
pub fn generate_transitions(
    state: &State,
    source_generator_id: Option<&str>,
    config: &TraceConfig,
    ctx: &SynthContext,
    seed: u64,
) -> Result<TransitionBatch, SynthError> {
    let model = &config.transition_model;
    let seeds: Vec<u64> = (0..config.transitions_per_state)
        .map(|j| mix_seed(seed, &format!("trans/{j}")))
        .collect();
    let outcomes: Vec<Result<Outcome, SynthError>> = seeds
        .par_iter()
        .map(|&s| run_one(ctx, model, state, s, "transition"))
        .collect();
    let provenance = |sampler_seed| ProvenanceInput {
        stage_index: ctx.stage_index,
        trace_type: config.trace_type,
        generator_id: model.id().to_string(),
        source_generator_id: source_generator_id.map(str::to_string),
        sampler_seed,
        specialist_prompt_used: ctx.specialist_prompt.is_some(),
    };
    let mut batch = TransitionBatch::default();
    for (outcome, s) in outcomes.into_iter().zip(seeds) {
        let (tb, obs) = match outcome? {
            Outcome::Simulated(tb, obs) => {
                batch.simulator_calls += 1;
                (tb, obs)
            }
            Outcome::Empty => (
                Testbench::empty(),
                FeedbackObservation::failure(SimStatus::CompileError, EMPTY_CANDIDATE_LOG),
            ),
            Outcome::GenFailed => {
                batch.generator_failures += 1;
                continue;
            }
            Outcome::Exhausted => {
                batch.truncated = true;
                continue;
            }
        };
        batch
            .records
            .push(TransitionRecord::new(state.clone(), tb, obs, provenance(s)));
    }
    if batch.truncated && batch.simulator_calls == 0 {
        return Err(SynthError::BudgetExhausted);
    }
    Ok(batch)
}

/// All transition candidates drawn from one selected state.
#[derive(Debug, Clone)]
pub struct StateTap {
    pub round: usize,
    pub source: State,
    pub records: Vec<TransitionRecord>,
    pub accepted: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct RepoSynthesis {
    pub repo_id: String,
    pub accepted: Vec<TransitionRecord>,
    pub taps: Vec<StateTap>,
    pub drafts: Vec<Candidate>,
    pub simulator_calls: u64,
    pub empty_candidates: u64,
    pub generator_failures: u64,
    pub truncated: bool,
}

/// Per-repo seed derived from the run seed.
pub fn repo_seed(global_seed: u64, repo_id: &str) -> u64 {
    mix_seed(global_seed, &format!("repo/{repo_id}"))
}

struct Frontier {
    state: State,
    generator_id: Option<String>,
    path: String,
}

/// Runs select → transition → reject from `frontier`, appending to `out`.
/// Returns the accepted records as the next frontier.
fn transition_round(
    round: usize,
    sources: Vec<Frontier>,
    config: &TraceConfig,
    rejection: &RejectionPolicy,
    ctx: &SynthContext,
    seed: u64,
    out: &mut RepoSynthesis,
) -> Result<Vec<Frontier>, SynthError> {
    let mut next = Vec::new();
    for src in sources {
        let batch = match generate_transitions(
            &src.state,
            src.generator_id.as_deref(),
            config,
            ctx,
            mix_seed(seed, &src.path),
        ) {
            Ok(b) => b,
            Err(SynthError::BudgetExhausted) => {
                out.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        out.simulator_calls += batch.simulator_calls;
        out.generator_failures += batch.generator_failures;
        out.empty_candidates += batch.records.iter().filter(|r| r.generated.is_empty()).count() as u64;
        out.truncated |= batch.truncated;
        let accepted = best_passing_index(&batch.records, rejection);
        if let Some(i) = accepted {
            let rec = batch.records[i].clone();
            next.push(Frontier {
                state: make_state(src.state.repo.clone(), rec.generated.clone(), rec.result.clone())?,
                generator_id: Some(rec.provenance.generator_id.clone()),
                path: format!("{}/{i}", src.path),
            });
            out.accepted.push(rec);
        }
        out.taps.push(StateTap {
            round,
            source: src.state,
            records: batch.records,
            accepted,
        });
        if out.truncated {
            break;
        }
    }
    Ok(next)
}

/// Sample drafts from `from`, then select the states to correct.
fn draft_round(
    from: &Frontier,
    config: &TraceConfig,
    selection: &SelectionPolicy,
    ctx: &SynthContext,
    seed: u64,
    out: &mut RepoSynthesis,
) -> Result<Vec<Frontier>, SynthError> {
    let set = match sample_candidate_states(&from.state, config, ctx, mix_seed(seed, &from.path)) {
        Ok(s) => s,
        Err(SynthError::BudgetExhausted) => {
            out.truncated = true;
            return Ok(Vec::new());
        }
        Err(e) => return Err(e),
    };
    out.simulator_calls += set.simulator_calls;
    out.empty_candidates += set.empty_drafts;
    out.generator_failures += set.generator_failures;
    out.truncated |= set.truncated;
    if set.candidates.is_empty() {
        return Ok(Vec::new());
    }
    let picked = select_indices(
        &set.states(),
        selection,
        mix_seed(seed, &format!("{}/select", from.path)),
    )?;
    let frontier = picked
        .iter()
        .map(|&i| Frontier {
            state: set.candidates[i].state.clone(),
            generator_id: Some(set.candidates[i].generator_id.clone()),
            path: format!("{}/d{i}", from.path),
        })
        .collect();
    out.drafts.extend(set.candidates);
    Ok(frontier)
}

/// Synthesizes supervision for one repository.
///
/// With `N = 1` every record is a direct transition from `s_0`. With
/// `N ≥ 2` the first round selects from drafts sampled at `s_0`; each later
/// round samples fresh drafts from the previously accepted states.
/// Budget exhaustion ends the run early with `truncated` set.
pub fn synthesize_repo(
    repo: Arc<Repository>,
    config: &TraceConfig,
    selection: &SelectionPolicy,
    rejection: &RejectionPolicy,
    ctx: &SynthContext,
    seed: u64,
) -> Result<RepoSynthesis, SynthError> {
    config.validate()?;
    selection.validate()?;
    rejection.validate()?;
    let mut out = RepoSynthesis {
        repo_id: repo.id.clone(),
        ..Default::default()
    };
    let root = Frontier {
        state: make_initial_state(repo),
        generator_id: None,
        path: "s0".into(),
    };
    if config.trajectory_length == 1 {
        transition_round(1, vec![root], config, rejection, ctx, seed, &mut out)?;
        return Ok(out);
    }
    let mut starts = vec![root];
    for round in 1..config.trajectory_length {
        let mut selected = Vec::new();
        for start in &starts {
            selected.extend(draft_round(start, config, selection, ctx, seed, &mut out)?);
            if out.truncated {
                break;
            }
        }
        if selected.is_empty() {
            break;
        }
        starts = transition_round(round, selected, config, rejection, ctx, seed, &mut out)?;
        if out.truncated || starts.is_empty() {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct CorpusSynthesis {
    /// Sorted by repo id.
    pub repos: Vec<RepoSynthesis>,
    pub truncated: bool,
}

impl CorpusSynthesis {
    pub fn accepted(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.repos.iter().flat_map(|r| r.accepted.iter())
    }

    pub fn simulator_calls(&self) -> u64 {
        self.repos.iter().map(|r| r.simulator_calls).sum()
    }
}

/// Runs [`synthesize_repo`] across a corpus on `workers` threads.
pub fn synthesize_corpus(
    repos: &[Arc<Repository>],
    config: &TraceConfig,
    selection: &SelectionPolicy,
    rejection: &RejectionPolicy,
    ctx: &SynthContext,
    global_seed: u64,
    workers: usize,
) -> Result<CorpusSynthesis, SynthError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SynthError::Config(format!("thread pool: {e}")))?;
    let mut results = pool.install(|| {
        repos
            .par_iter()
            .map(|repo| {
                synthesize_repo(
                    repo.clone(),
                    config,
                    selection,
                    rejection,
                    ctx,
                    repo_seed(global_seed, &repo.id),
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
    let truncated = results.iter().any(|r| r.truncated);
    Ok(CorpusSynthesis {
        repos: results,
        truncated,
    })
}

#[cfg(test)]
mod tests;
