// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use super::*;
use crate::domain::GenerationMode;
use crate::genbridge::{BinGreedyParams, Generator, GeneratorHandle, PromptBundle, ScriptedStrategy};
use crate::simbridge::{synthetic_rules, Budget, SyntheticDesign, DESIGN_FILE};

const BINS: [&str; 5] = ["b0", "b1", "b2", "b3", "b4"];

fn repo(id: &str) -> Arc<Repository> {
    let design = SyntheticDesign::new(
        BINS.iter().map(|s| s.to_string()).collect(),
        ["HAZ".to_string()].into(),
        ["TRAP".to_string()].into(),
    )
    .unwrap();
    let mut files = BTreeMap::new();
    files.insert(DESIGN_FILE.to_string(), design.render());
    files.insert("rtl/top.sv".to_string(), "module top; endmodule".to_string());
    Arc::new(Repository::new(id, files, 0.8).unwrap())
}

/// Returns a fixed output per seed; unknown seeds get `fallback`.
struct BySeed {
    outputs: HashMap<u64, String>,
    fallback: String,
}

impl Generator for BySeed {
    fn generate(&self, _: &PromptBundle, seed: u64) -> Result<String, GenError> {
        Ok(self.outputs.get(&seed).cloned().unwrap_or_else(|| self.fallback.clone()))
    }
}

fn by_seed(id: &str, outputs: HashMap<u64, String>, fallback: &str) -> Model {
    Model::new(
        GeneratorHandle::scripted(id, id),
        Arc::new(BySeed {
            outputs,
            fallback: fallback.to_string(),
        }),
    )
}

fn greedy(id: &str, bins_per_call: usize, hazard_rate: f64, heal: bool) -> Model {
    Model::scripted(
        id,
        ScriptedStrategy::BinGreedy(BinGreedyParams {
            bins_per_call,
            initial_min: 1,
            initial_max: 3,
            hazard_rate,
            heal,
            ..Default::default()
        }),
    )
}

fn ctx(limit: u64) -> SynthContext {
    SynthContext::new(Simulator::synthetic(Arc::new(Budget::new(limit).unwrap())), 0)
}

fn cfg(t: TraceType, int: &Model, trans: &Model, n: usize, n_cand: usize, n_trans: usize) -> TraceConfig {
    TraceConfig {
        intermediate_model: int.clone(),
        transition_model: trans.clone(),
        trace_type: t,
        trajectory_length: n,
        candidates_per_state: n_cand,
        transitions_per_state: n_trans,
    }
}

fn oracle_cov(text: &str) -> f64 {
    let r = repo("x");
    let d = SyntheticDesign::from_repo(&r, DESIGN_FILE).unwrap();
    crate::domain::coverage_score(&synthetic_rules(&d, text))
}

#[test]
fn candidate_coverages_follow_synthetic_rules() {
    let seed = 9;
    let drafts = ["b0 b1", "b3", "b2 b3 b4"];
    let outputs = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| (mix_seed(seed, &format!("draft/{i}")), d.to_string()))
        .collect();
    let m = by_seed("m", outputs, "");
    let c = ctx(100);
    let set = sample_candidate_states(
        &make_initial_state(repo("r")),
        &cfg(TraceType::SelfSampling, &m, &m, 2, 3, 1),
        &c,
        seed,
    )
    .unwrap();
    let got: Vec<f64> = set.candidates.iter().map(|c| c.state.coverage).collect();
    let want: Vec<f64> = drafts.iter().map(|d| oracle_cov(d)).collect();
    assert_eq!(got, want);
    assert_eq!(want, [0.4, 0.2, 0.6]);
    assert_eq!(set.simulator_calls, 3);
}

#[test]
fn partial_candidates_on_exhaustion() {
    let m = by_seed("m", HashMap::new(), "b0");
    let c = ctx(2);
    let set = sample_candidate_states(
        &make_initial_state(repo("r")),
        &cfg(TraceType::SelfSampling, &m, &m, 2, 3, 1),
        &c,
        1,
    )
    .unwrap();
    assert_eq!(set.candidates.len(), 2);
    assert!(set.truncated);

    let err = sample_candidate_states(
        &make_initial_state(repo("r")),
        &cfg(TraceType::SelfSampling, &m, &m, 2, 3, 1),
        &c,
        1,
    )
    .unwrap_err();
    assert!(matches!(err, SynthError::BudgetExhausted));
}

#[test]
fn hazard_drafts_all_fail() {
    let m = by_seed("m", HashMap::new(), "b0 HAZ");
    let set = sample_candidate_states(
        &make_initial_state(repo("r")),
        &cfg(TraceType::SelfSampling, &m, &m, 2, 4, 1),
        &ctx(10),
        1,
    )
    .unwrap();
    assert_eq!(set.candidates.len(), 4);
    for c in &set.candidates {
        assert_eq!(c.state.observation.status, SimStatus::CompileError);
        assert_eq!(c.state.coverage, 0.0);
    }
}

#[test]
fn transition_adds_two_bins() {
    let r = repo("r");
    let d = SyntheticDesign::from_repo(&r, DESIGN_FILE).unwrap();
    let src = make_state(r.clone(), Testbench::new("b0 b1"), synthetic_rules(&d, "b0 b1")).unwrap();
    assert_eq!(src.coverage, 0.4);
    let teacher = greedy("t", 2, 0.0, true);
    let b = generate_transitions(&src, Some("s"), &cfg(TraceType::Imitation, &teacher, &teacher, 2, 1, 1), &ctx(5), 3)
        .unwrap();
    let rec = &b.records[0];
    let want = oracle_cov(&rec.generated.text) - 0.4;
    assert_eq!(rec.delta_cov, want);
    assert!((rec.delta_cov - 0.4).abs() < 1e-12);
    assert_eq!(rec.provenance.source_generator_id.as_deref(), Some("s"));
    assert_eq!(rec.mode(), GenerationMode::Agentic);
}

#[test]
fn empty_transition_costs_nothing() {
    let m = by_seed("m", HashMap::new(), "```systemverilog\n```\n");
    let c = ctx(5);
    let b = generate_transitions(
        &make_initial_state(repo("r")),
        None,
        &cfg(TraceType::SelfSampling, &m, &m, 1, 1, 2),
        &c,
        0,
    )
    .unwrap();
    assert_eq!(b.records.len(), 2);
    assert!(b.records.iter().all(|r| r.result.status == SimStatus::CompileError));
    assert_eq!(c.simulator.budget().used(), 0);
}

#[test]
fn n_trans_consumes_exactly_that_many_calls() {
    let m = greedy("m", 1, 0.0, true);
    let c = ctx(4);
    let b = generate_transitions(
        &make_initial_state(repo("r")),
        None,
        &cfg(TraceType::SelfSampling, &m, &m, 1, 1, 4),
        &c,
        0,
    )
    .unwrap();
    assert_eq!(b.records.len(), 4);
    assert_eq!(c.simulator.budget().used(), 4);
    assert!(!b.truncated);
}

fn record_with(delta_target: f64, final_cov_tenths: u64) -> TransitionRecord {
    let r = repo("r");
    let mut m = crate::domain::Metrics::new();
    m.insert("bins".into(), crate::domain::MetricCount { covered: final_cov_tenths, total: 10 });
    let obs = FeedbackObservation::success(m, "").unwrap();
    let src_cov = final_cov_tenths as f64 / 10.0 - delta_target;
    let mut sm = crate::domain::Metrics::new();
    sm.insert(
        "bins".into(),
        crate::domain::MetricCount { covered: (src_cov * 100.0).round() as u64, total: 100 },
    );
    let src = make_state(r, Testbench::new("b0"), FeedbackObservation::success(sm, "").unwrap()).unwrap();
    TransitionRecord::new(
        src,
        Testbench::new("b1"),
        obs,
        ProvenanceInput {
            stage_index: 0,
            trace_type: TraceType::FullTeacher,
            generator_id: "t".into(),
            source_generator_id: Some("t".into()),
            sampler_seed: 0,
            specialist_prompt_used: false,
        },
    )
}

#[test]
fn rejection_keeps_largest_delta() {
    let recs = vec![record_with(0.02, 5), record_with(0.10, 5), record_with(0.05, 5)];
    let p = RejectionPolicy::default();
    assert_eq!(best_passing_index(&recs, &p), Some(1));
    assert!((rejection_filter(&recs, &p).unwrap().delta_cov - 0.10).abs() < 1e-12);
}

#[test]
fn rejection_thresholds() {
    assert!(rejection_filter(&[record_with(0.0, 5)], &RejectionPolicy::default()).is_none());
    let r = record_with(0.20, 4);
    let mut p = RejectionPolicy::stage0();
    assert!(rejection_filter(std::slice::from_ref(&r), &p).is_none());
    p.min_absolute_coverage = None;
    assert!(rejection_filter(std::slice::from_ref(&r), &p).is_some());
}

#[test]
fn rejection_ties_pick_earliest() {
    let recs = vec![record_with(0.1, 5), record_with(0.1, 5)];
    assert_eq!(best_passing_index(&recs, &RejectionPolicy::default()), Some(0));
}

#[test]
fn role_checks() {
    let t = greedy("teacher", 2, 0.0, true);
    let s = greedy("student", 1, 0.2, false);
    for tt in [TraceType::FullTeacher, TraceType::Imitation, TraceType::SelfSampling] {
        TraceConfig::from_roles(tt, &t, &s, 2, 5, 4).check_roles("teacher", "student").unwrap();
    }
    assert!(cfg(TraceType::Imitation, &t, &t, 2, 1, 1).validate().is_err());
    assert!(cfg(TraceType::FullTeacher, &s, &t, 2, 1, 1).validate().is_err());
    assert!(cfg(TraceType::Imitation, &t, &s, 2, 1, 1).check_roles("teacher", "student").is_err());
    assert!(cfg(TraceType::SelfSampling, &s, &s, 0, 1, 1).validate().is_err());
}

fn run(
    trace: TraceType,
    n: usize,
    limit: u64,
    strat: SelectionStrategy,
    seed: u64,
) -> (RepoSynthesis, u64) {
    let t = greedy("teacher", 2, 0.0, true);
    let s = greedy("student", 1, 0.4, false);
    let config = TraceConfig::from_roles(trace, &t, &s, n, 5, 4);
    let c = ctx(limit);
    let out = synthesize_repo(
        repo("r"),
        &config,
        &SelectionPolicy::worst().with_strategy(strat),
        &RejectionPolicy::default(),
        &c,
        seed,
    )
    .unwrap();
    let used = c.simulator.budget().used();
    (out, used)
}

#[test]
fn n2_records_pass_filter_and_conserve_budget() {
    let (out, used) = run(TraceType::Imitation, 2, 1000, SelectionStrategy::Worst, 5);
    assert!(!out.accepted.is_empty());
    for r in &out.accepted {
        assert!(r.delta_cov >= 0.01);
        assert_eq!(r.mode(), GenerationMode::Agentic);
        assert_eq!(r.provenance.generator_id, "teacher");
        assert_eq!(r.provenance.source_generator_id.as_deref(), Some("student"));
    }
    assert_eq!(out.simulator_calls, used);
    let drafts = out.drafts.len() as u64;
    let nonempty: u64 = out
        .taps
        .iter()
        .map(|t| t.records.iter().filter(|r| !r.generated.is_empty()).count() as u64)
        .sum();
    assert_eq!(used, drafts + nonempty);
}

#[test]
fn n1_is_direct_from_s0() {
    let (out, _) = run(TraceType::FullTeacher, 1, 1000, SelectionStrategy::Worst, 5);
    assert_eq!(out.accepted.len(), 1);
    assert!(out.drafts.is_empty());
    let r = &out.accepted[0];
    assert_eq!(r.mode(), GenerationMode::Direct);
    assert!(r.source.is_initial());
    assert_eq!(r.provenance.source_generator_id, None);
}

#[test]
fn deeper_rounds_chain_from_accepted_states() {
    let (out, used) = run(TraceType::SelfSampling, 3, 1000, SelectionStrategy::Worst, 2);
    assert!(out.taps.iter().any(|t| t.round == 2));
    assert_eq!(out.simulator_calls, used);
}

#[test]
fn synthesis_is_deterministic() {
    let (a, _) = run(TraceType::Imitation, 2, 1000, SelectionStrategy::Uniform, 77);
    let (b, _) = run(TraceType::Imitation, 2, 1000, SelectionStrategy::Uniform, 77);
    assert_eq!(a.accepted, b.accepted);
}

#[test]
fn truncation_is_partial_not_fatal() {
    let (out, used) = run(TraceType::Imitation, 2, 7, SelectionStrategy::Worst, 5);
    assert!(out.truncated);
    assert_eq!(used, 7);
    assert_eq!(out.simulator_calls, 7);
}

#[test]
fn corpus_order_and_worker_independence() {
    let repos: Vec<_> = ["zeta", "alpha", "mid"].iter().map(|id| repo(id)).collect();
    let t = greedy("teacher", 2, 0.0, true);
    let s = greedy("student", 1, 0.3, false);
    let config = TraceConfig::from_roles(TraceType::Imitation, &t, &s, 2, 5, 4);
    let go = |w| {
        synthesize_corpus(
            &repos,
            &config,
            &SelectionPolicy::worst(),
            &RejectionPolicy::default(),
            &ctx(10_000),
            11,
            w,
        )
        .unwrap()
    };
    let a = go(1);
    let b = go(4);
    let ids: Vec<&str> = a.repos.iter().map(|r| r.repo_id.as_str()).collect();
    assert_eq!(ids, ["alpha", "mid", "zeta"]);
    assert_eq!(a.accepted().cloned().collect::<Vec<_>>(), b.accepted().cloned().collect::<Vec<_>>());
}

#[test]
fn prompt_sink_sees_specialist_text() {
    let log = Arc::new(MemoryPromptLog::new());
    let m = greedy("m", 1, 0.0, true);
    let c = ctx(100)
        .with_specialist(Some("RULE-SENTINEL".into()))
        .with_prompt_sink(log.clone());
    let b = generate_transitions(
        &make_initial_state(repo("r")),
        None,
        &cfg(TraceType::SelfSampling, &m, &m, 1, 1, 2),
        &c,
        0,
    )
    .unwrap();
    assert!(b.records.iter().all(|r| r.provenance.specialist_prompt_used));
    assert_eq!(log.len(), 2);
    drop(c);
    let entries = Arc::try_unwrap(log).unwrap().into_sorted();
    assert!(entries.iter().all(|e| e.messages.iter().any(|m| m.text.contains("RULE-SENTINEL"))));
}

fn brute_best(records: &[TransitionRecord], p: &RejectionPolicy) -> Option<f64> {
    records
        .iter()
        .filter(|r| p.passes(r))
        .map(|r| r.delta_cov)
        .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.max(d))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn accepted_records_are_maximal(seed in any::<u64>(), hz in 0.0f64..0.6) {
        let t = greedy("teacher", 2, 0.0, true);
        let s = greedy("student", 1, hz, false);
        let config = TraceConfig::from_roles(TraceType::Imitation, &t, &s, 2, 5, 4);
        let c = ctx(1000);
        let p = RejectionPolicy::default();
        let out = synthesize_repo(repo("r"), &config, &SelectionPolicy::worst(), &p, &c, seed).unwrap();
        for tap in &out.taps {
            match (tap.accepted, brute_best(&tap.records, &p)) {
                (Some(i), Some(best)) => prop_assert_eq!(tap.records[i].delta_cov, best),
                (None, None) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
        prop_assert_eq!(out.simulator_calls, c.simulator.budget().used());
    }

    #[test]
    fn worst_contains_global_argmin(covs in proptest::collection::vec(0u64..=10, 1..10)) {
        let r = repo("r");
        let states: Vec<State> = covs.iter().map(|&c| {
            let mut m = crate::domain::Metrics::new();
            m.insert("bins".into(), crate::domain::MetricCount { covered: c, total: 10 });
            make_state(r.clone(), Testbench::new("t"), FeedbackObservation::success(m, "").unwrap()).unwrap()
        }).collect();
        let min = states.iter().map(|s| s.coverage).fold(f64::INFINITY, f64::min);
        let sel = select_states(&states, &SelectionPolicy::worst(), 0).unwrap();
        prop_assert!(sel.iter().any(|s| s.coverage == min));
    }
}
