// SPDX-License-Identifier: Apache-2.0

//! Direct and agentic evaluation with Cov Pass, Sim Pass, Avg Cov and
//! unbiased pass@k.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{make_initial_state, make_state, DomainError, FeedbackObservation, Repository, SimStatus, Testbench};
use crate::genbridge::{extract_testbench, render_memoryless, render_vanilla, GenError, Model, PromptMode};
use crate::seeds::{fingerprint, mix_seed};
use crate::simbridge::{SimError, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("pass_at_k domain: need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")]
    Domain { n: u64, c: u64, k: u64 },
    #[error("repo {repo} has {got} samples, expected {want}")]
    RaggedSamples { repo: String, got: usize, want: usize },
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    State(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Direct,
    Agentic,
}

/// Which round scores an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeScore {
    #[default]
    Best,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub rounds: usize,
    pub samples: usize,
    pub prompt_mode: PromptMode,
    #[serde(default)]
    pub score: EpisodeScore,
    /// Extra rules appended to every prompt, if any.
    #[serde(default)]
    pub specialist_prompt: Option<String>,
}

impl EvalConfig {
    pub fn direct(samples: usize) -> Self {
        Self {
            mode: EvalMode::Direct,
            rounds: 1,
            samples,
            prompt_mode: PromptMode::Memoryless,
            score: EpisodeScore::Best,
            specialist_prompt: None,
        }
    }

    pub fn agentic(rounds: usize, samples: usize, prompt_mode: PromptMode) -> Self {
        Self {
            mode: EvalMode::Agentic,
            rounds,
            samples,
            prompt_mode,
            score: EpisodeScore::Best,
            specialist_prompt: None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.rounds == 0 || self.samples == 0 {
            return Err(EvalError::Config("rounds and samples must be positive".into()));
        }
        if self.mode == EvalMode::Direct && self.rounds != 1 {
            return Err(EvalError::Config("direct evaluation runs exactly one round".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub testbench_hash: String,
    pub observation: FeedbackObservation,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub repo_id: String,
    pub sample_index: usize,
    pub rounds: Vec<RoundRecord>,
    pub episode_cov: f64,
    /// Coverage of the last round, kept alongside the best.
    pub final_cov: f64,
    pub sim_pass: bool,
    pub cov_pass: bool,
    /// The budget ran out before all rounds completed.
    pub truncated: bool,
}

/// Plays one episode of up to `config.rounds` generate-simulate rounds.
pub fn run_episode(
    repo: &Arc<Repository>,
    model: &Model,
    simulator: &Simulator,
    config: &EvalConfig,
    seed: u64,
    sample_index: usize,
) -> Result<EpisodeResult, EvalError> {
    config.validate()?;
    let specialist = config.specialist_prompt.as_deref();
    let mut state = make_initial_state(repo.clone());
    let mut history: Vec<(Testbench, FeedbackObservation)> = Vec::new();
    let mut rounds = Vec::new();
    let mut truncated = false;
    for r in 0..config.rounds {
        let bundle = match config.prompt_mode {
            PromptMode::Memoryless => render_memoryless(&state, specialist),
            PromptMode::Vanilla => render_vanilla(&history, repo, specialist),
        };
        let raw = match model.generate(&bundle, mix_seed(seed, &format!("round/{r}"))) {
            Ok(raw) => raw,
            Err(GenError::EmptyCompletion) => String::new(),
            Err(e) => return Err(e.into()),
        };
        let tb = extract_testbench(&raw);
        if tb.is_empty() {
            rounds.push(RoundRecord {
                testbench_hash: fingerprint(b""),
                observation: FeedbackObservation::failure(SimStatus::CompileError, "empty testbench"),
                coverage: 0.0,
            });
            continue;
        }
        let obs = match simulator.simulate(repo, &tb) {
            Ok(o) => o,
            Err(SimError::BudgetExhausted) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let next = make_state(repo.clone(), tb.clone(), obs.clone())?;
        rounds.push(RoundRecord {
            testbench_hash: fingerprint(tb.text.as_bytes()),
            observation: obs.clone(),
            coverage: next.coverage,
        });
        history.push((tb, obs));
        state = next;
    }
    let best = rounds.iter().map(|r| r.coverage).fold(0.0, f64::max);
    let final_cov = rounds.last().map_or(0.0, |r| r.coverage);
    let episode_cov = match config.score {
        EpisodeScore::Best => best,
        EpisodeScore::Final => final_cov,
    };
    let sim_pass = rounds.iter().any(|r| r.observation.status == SimStatus::Success);
    Ok(EpisodeResult {
        repo_id: repo.id.clone(),
        sample_index,
        cov_pass: sim_pass && episode_cov >= repo.pass_threshold,
        rounds,
        episode_cov,
        final_cov,
        sim_pass,
        truncated,
    })
}

/// All `(repo, sample)` episodes, ordered by `(repo_id, sample_index)`.
pub fn run_eval(
    corpus: &[Arc<Repository>],
    model: &Model,
    simulator: &Simulator,
    config: &EvalConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<EpisodeResult>, EvalError> {
    config.validate()?;
    let jobs: Vec<(&Arc<Repository>, usize)> = corpus
        .iter()
        .flat_map(|r| (0..config.samples).map(move |s| (r, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    let mut out = pool.install(|| {
        jobs.par_iter()
            .map(|&(repo, s)| {
                let seed = mix_seed(seed, &format!("eval/{}/{s}", repo.id));
                run_episode(repo, model, simulator, config, seed, s)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    out.sort_by(|a, b| (&a.repo_id, a.sample_index).cmp(&(&b.repo_id, b.sample_index)));
    Ok(out)
}

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::Domain { n, c, k });
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k)/C(n, k) = prod_{i=n-c+1}^{n} (1 - k/i)
    let ratio: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoMetrics {
    pub repo_id: String,
    pub cov_passes: usize,
    pub sim_passes: usize,
    pub mean_cov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub k: usize,
    pub samples: usize,
    pub repos: usize,
    pub cov_pass_at_k: f64,
    pub sim_pass_at_k: f64,
    pub avg_cov: f64,
    pub truncated_episodes: usize,
    pub per_repo: Vec<RepoMetrics>,
}

impl MetricsTable {
    /// `(label, value)` rows in display order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        vec![
            (format!("Cov Pass@{}", self.k), self.cov_pass_at_k),
            (format!("Sim Pass@{}", self.k), self.sim_pass_at_k),
            ("Avg Cov".to_string(), self.avg_cov),
        ]
    }

    /// Aligned two-column text table, four decimals.
    pub fn render(&self) -> String {
        let rows = self.rows();
        let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("metric".len());
        let mut s = format!("{:<w$}  value\n", "metric");
        for (label, v) in rows {
            let _ = writeln!(s, "{label:<w$}  {v:.4}");
        }
        s
    }
}

/// Reduces episodes over every repo in `corpus`. Each repo needs the same
/// sample count `n ≥ k`.
pub fn aggregate(results: &[EpisodeResult], corpus: &[Arc<Repository>], k: usize) -> Result<MetricsTable, EvalError> {
    let mut by_repo: BTreeMap<&str, Vec<&EpisodeResult>> =
        corpus.iter().map(|r| (r.id.as_str(), Vec::new())).collect();
    for e in results {
        by_repo
            .get_mut(e.repo_id.as_str())
            .ok_or_else(|| EvalError::Config(format!("episode for unknown repo {}", e.repo_id)))?
            .push(e);
    }
    let n = by_repo.values().next().map_or(0, Vec::len);
    for (repo, eps) in &by_repo {
        if eps.len() != n {
            return Err(EvalError::RaggedSamples {
                repo: repo.to_string(),
                got: eps.len(),
                want: n,
            });
        }
    }
    if by_repo.is_empty() {
        return Err(EvalError::Config("no repositories to aggregate".into()));
    }
    if n < k || k == 0 {
        return Err(EvalError::Domain { n: n as u64, c: 0, k: k as u64 });
    }
    let mut per_repo = Vec::new();
    let (mut cov, mut sim, mut avg) = (0.0, 0.0, 0.0);
    for (repo, eps) in &by_repo {
        let c = eps.iter().filter(|e| e.cov_pass).count();
        let s = eps.iter().filter(|e| e.sim_pass).count();
        let mean = eps.iter().map(|e| e.episode_cov).sum::<f64>() / n as f64;
        cov += pass_at_k(n as u64, c as u64, k as u64)?;
        sim += pass_at_k(n as u64, s as u64, k as u64)?;
        avg += mean;
        per_repo.push(RepoMetrics {
            repo_id: repo.to_string(),
            cov_passes: c,
            sim_passes: s,
            mean_cov: mean,
        });
    }
    let m = by_repo.len() as f64;
    Ok(MetricsTable {
        k,
        samples: n,
        repos: by_repo.len(),
        cov_pass_at_k: cov / m,
        sim_pass_at_k: sim / m,
        avg_cov: avg / m,
        truncated_episodes: results.iter().filter(|e| e.truncated).count(),
        per_repo,
    })
}
