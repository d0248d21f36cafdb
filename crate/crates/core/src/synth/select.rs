// SPDX-License-Identifier: Apache-2.0

//! Intermediate-state selection: worst-state prioritization and the
//! Best / Median / Uniform ablation baselines.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::domain::{SimStatus, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Worst,
    Best,
    Uniform,
    Median,
}

fn default_gap() -> f64 {
    0.2
}
fn yes() -> bool {
    true
}
fn three() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPolicy {
    pub strategy: SelectionStrategy,
    /// Minimum median-minus-worst coverage gap for adding the median state.
    #[serde(rename = "delta_med", default = "default_gap")]
    pub median_gap_threshold: f64,
    #[serde(rename = "include_failure", default = "yes")]
    pub include_failure_state: bool,
    #[serde(rename = "include_median", default = "yes")]
    pub include_median_state: bool,
    #[serde(rename = "max_states", default = "three")]
    pub max_states_per_repo: usize,
    /// When set, non-worst strategies pick exactly as many states as the
    /// worst-state rule would on the same candidates.
    #[serde(default)]
    pub budget_match: bool,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self::worst()
    }
}

impl SelectionPolicy {
    pub fn worst() -> Self {
        Self {
            strategy: SelectionStrategy::Worst,
            median_gap_threshold: default_gap(),
            include_failure_state: true,
            include_median_state: true,
            max_states_per_repo: 3,
            budget_match: false,
        }
    }

    pub fn with_strategy(self, strategy: SelectionStrategy) -> Self {
        Self { strategy, ..self }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.median_gap_threshold) {
            return Err(SynthError::Config("delta_med must lie in [0, 1]".into()));
        }
        if !(1..=3).contains(&self.max_states_per_repo) {
            return Err(SynthError::Config("max_states must lie in [1, 3]".into()));
        }
        Ok(())
    }
}

/// Indices sorted by ascending coverage; sampling order breaks ties.
fn ascending(states: &[State], pool: &[usize]) -> Vec<usize> {
    let mut v = pool.to_vec();
    v.sort_by(|&a, &b| {
        states[a]
            .coverage
            .total_cmp(&states[b].coverage)
            .then(a.cmp(&b))
    });
    v
}

/// Indices sorted by descending coverage; sampling order breaks ties.
fn descending(states: &[State], pool: &[usize]) -> Vec<usize> {
    let mut v = pool.to_vec();
    v.sort_by(|&a, &b| {
        states[b]
            .coverage
            .total_cmp(&states[a].coverage)
            .then(a.cmp(&b))
    });
    v
}

fn lower_median(sorted: &[usize]) -> usize {
    sorted[(sorted.len() - 1) / 2]
}

fn worst_rule(states: &[State], policy: &SelectionPolicy) -> Vec<usize> {
    let (failed, ok): (Vec<usize>, Vec<usize>) =
        (0..states.len()).partition(|&i| states[i].observation.status != SimStatus::Success);
    let mut out = Vec::new();
    if ok.is_empty() {
        out.push(failed[0]);
        return out;
    }
    if policy.include_failure_state {
        if let Some(&f) = failed.first() {
            out.push(f);
        }
    }
    let sorted = ascending(states, &ok);
    let worst = sorted[0];
    out.push(worst);
    let median = lower_median(&sorted);
    if policy.include_median_state
        && states[median].coverage - states[worst].coverage > policy.median_gap_threshold
    {
        out.push(median);
    }
    out.truncate(policy.max_states_per_repo);
    out
}

fn median_rule(states: &[State], policy: &SelectionPolicy, target: Option<usize>) -> Vec<usize> {
    let all: Vec<usize> = (0..states.len()).collect();
    let sorted = ascending(states, &all);
    let m = (sorted.len() - 1) / 2;
    let median = sorted[m];
    let worst = sorted[0];
    let mut out = vec![median];
    if states[median].coverage - states[worst].coverage > policy.median_gap_threshold {
        out.push(worst);
    }
    let limit = target.unwrap_or(policy.max_states_per_repo);
    if let Some(target) = target {
        // Fill outward from the median rank.
        let mut offset = 1;
        while out.len() < target && offset < sorted.len() {
            for pos in [m + offset, m.wrapping_sub(offset)] {
                if let Some(&i) = sorted.get(pos) {
                    if out.len() < target && !out.contains(&i) {
                        out.push(i);
                    }
                }
            }
            offset += 1;
        }
    }
    out.truncate(limit);
    out
}

/// Indices of the selected candidates, in selection order.
pub fn select_indices(
    candidates: &[State],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<Vec<usize>, SynthError> {
    if candidates.is_empty() {
        return Err(SynthError::EmptyCandidates);
    }
    let worst = worst_rule(candidates, policy);
    let target = (policy.budget_match && policy.strategy != SelectionStrategy::Worst)
        .then_some(worst.len());
    let cap = target
        .unwrap_or(policy.max_states_per_repo)
        .min(candidates.len());
    let all: Vec<usize> = (0..candidates.len()).collect();
    Ok(match policy.strategy {
        SelectionStrategy::Worst => worst,
        SelectionStrategy::Best => descending(candidates, &all).into_iter().take(cap).collect(),
        SelectionStrategy::Median => median_rule(candidates, policy, target),
        SelectionStrategy::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, candidates.len(), cap).into_vec()
        }
    })
}

pub fn select_states(
    candidates: &[State],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<Vec<State>, SynthError> {
    Ok(select_indices(candidates, policy, seed)?
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}
