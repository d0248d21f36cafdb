// SPDX-License-Identifier: Apache-2.0

//! Job configuration files.
//!
//! ```toml
//! [corpus]
//! path = "corpus"
//! scripts = "scripts.toml"
//!
//! [models.teacher]
//! id = "teacher"
//! model = "teacher"
//!
//! [models.student]
//! id = "student"
//! model = "student"
//!
//! [trace]
//! n = 2
//! n_cand = 5
//! n_trans = 4
//!
//! [selection]
//! strategy = "worst"
//!
//! [budget]
//! simulator_calls = 20000
//!
//! [run]
//! seed = 1
//! workers = 4
//! ```
//!
//! Every `[trace]`, `[selection]`, `[rejection]`, `[rebalance]` and
//! `[stage]` key is optional and overrides the stage defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use covforge_core::domain::{Repository, TraceType};
use covforge_core::genbridge::{GeneratorHandle, Model, ScriptManifest};
use covforge_core::simbridge::SimulatorConfig;
use covforge_core::stages::{RebalanceRule, StageRegistry, StageSpec};
use covforge_core::synth::SelectionStrategy;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default)]
    pub scripts: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    #[serde(rename = "type")]
    pub trace_type: Option<TraceType>,
    pub n: Option<usize>,
    pub n_cand: Option<usize>,
    pub n_trans: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub strategy: Option<SelectionStrategy>,
    pub delta_med: Option<f64>,
    pub max_states: Option<usize>,
    pub include_failure: Option<bool>,
    pub include_median: Option<bool>,
    pub budget_match: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectionSection {
    pub tau_delta: Option<f64>,
    pub min_absolute: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RebalanceSection {
    pub enabled: Option<bool>,
    pub short_context_limit: Option<usize>,
    pub keep_fraction_direct: Option<f64>,
    pub keep_fraction_agentic: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub include_direct: Option<bool>,
    pub specialist_prompt: Option<bool>,
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub simulator_calls: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub corpus: CorpusSection,
    #[serde(default)]
    pub models: BTreeMap<String, GeneratorHandle>,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub rejection: RejectionSection,
    #[serde(default)]
    pub rebalance: RebalanceSection,
    #[serde(default)]
    pub stage: StageSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub simulator: SimulatorConfig,
}

/// A parsed config plus where it came from.
pub struct LoadedConfig {
    pub job: JobConfig,
    pub dir: PathBuf,
    pub bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
        let job: JobConfig = toml::from_str(text).with_context(|| format!("parsing config {}", path.display()))?;
        job.simulator.validate().context("[simulator]")?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { job, dir, bytes })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn corpus(&self) -> Result<Vec<Arc<Repository>>> {
        let dir = self.resolve(&self.job.corpus.path);
        covforge_core::corpus::load_corpus(&dir).with_context(|| format!("loading corpus {}", dir.display()))
    }

    pub fn scripts(&self) -> Result<ScriptManifest> {
        match &self.job.corpus.scripts {
            Some(p) => {
                let p = self.resolve(p);
                ScriptManifest::load(&p).with_context(|| format!("loading scripts {}", p.display()))
            }
            None => Ok(ScriptManifest::default()),
        }
    }

    pub fn registry(&self) -> Result<Option<StageRegistry>> {
        self.job
            .stage
            .registry
            .as_ref()
            .map(|p| {
                let p = self.resolve(p);
                StageRegistry::load(&p).with_context(|| format!("loading stage registry {}", p.display()))
            })
            .transpose()
    }

    pub fn handle(&self, name: &str) -> Result<GeneratorHandle> {
        if let Some(k) = name.strip_prefix("stage:") {
            let k: u32 = k.parse().with_context(|| format!("bad stage reference `{name}`"))?;
            let Some(reg) = self.registry()? else {
                bail!("`{name}` needs [stage] registry in the config");
            };
            return Ok(reg.student_for(k)?.clone());
        }
        match self.job.models.get(name) {
            Some(h) => Ok(h.clone()),
            None => bail!(
                "no model `{name}` in [models] (have: {})",
                self.job.models.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        }
    }

    pub fn model(&self, name: &str, scripts: &ScriptManifest) -> Result<Model> {
        let h = self.handle(name)?;
        Model::connect(h, scripts).with_context(|| format!("connecting model `{name}`"))
    }

    /// Stage defaults with this config's overrides applied.
    pub fn stage_spec(&self, k: u32) -> Result<StageSpec> {
        let j = &self.job;
        let mut s = StageSpec::default_for(k);
        if let Some(t) = j.trace.trace_type {
            s.trace_type = t;
        }
        s.trajectory_length = j.trace.n.unwrap_or(s.trajectory_length);
        s.candidates_per_state = j.trace.n_cand.unwrap_or(s.candidates_per_state);
        s.transitions_per_state = j.trace.n_trans.unwrap_or(s.transitions_per_state);
        let sel = &j.selection;
        if let Some(v) = sel.strategy {
            s.selection.strategy = v;
        }
        s.selection.median_gap_threshold = sel.delta_med.unwrap_or(s.selection.median_gap_threshold);
        s.selection.max_states_per_repo = sel.max_states.unwrap_or(s.selection.max_states_per_repo);
        s.selection.include_failure_state = sel.include_failure.unwrap_or(s.selection.include_failure_state);
        s.selection.include_median_state = sel.include_median.unwrap_or(s.selection.include_median_state);
        s.selection.budget_match = sel.budget_match.unwrap_or(s.selection.budget_match);
        s.rejection.min_delta = j.rejection.tau_delta.unwrap_or(s.rejection.min_delta);
        if let Some(m) = j.rejection.min_absolute {
            s.rejection.min_absolute_coverage = Some(m);
        }
        let rb = &j.rebalance;
        let enabled = rb.enabled.unwrap_or(s.rebalance.is_some());
        s.rebalance = enabled.then(|| {
            let d = s.rebalance.unwrap_or_default();
            RebalanceRule {
                short_context_limit: rb.short_context_limit.unwrap_or(d.short_context_limit),
                keep_fraction_direct: rb.keep_fraction_direct.unwrap_or(d.keep_fraction_direct),
                keep_fraction_agentic: rb.keep_fraction_agentic.unwrap_or(d.keep_fraction_agentic),
            }
        });
        s.include_direct = j.stage.include_direct.unwrap_or(s.include_direct);
        s.specialist_prompt = j.stage.specialist_prompt.unwrap_or(s.specialist_prompt);
        s.validate()?;
        Ok(s)
    }
}

/// Run knobs after CLI flags override the config file.
#[derive(Debug, Clone, Copy)]
pub struct RunKnobs {
    pub seed: u64,
    pub workers: usize,
    pub budget: u64,
}

impl RunKnobs {
    pub fn resolve(cfg: Option<&JobConfig>, seed: Option<u64>, workers: Option<usize>, budget: Option<u64>) -> Result<Self> {
        let seed = seed.or(cfg.and_then(|c| c.run.seed)).unwrap_or(0);
        let workers = workers.or(cfg.and_then(|c| c.run.workers)).unwrap_or(1);
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        let Some(budget) = budget.or(cfg.and_then(|c| c.budget.simulator_calls)) else {
            bail!("no simulator budget: set [budget] simulator_calls or pass --budget");
        };
        if budget == 0 {
            bail!("simulator budget must be positive");
        }
        Ok(Self { seed, workers, budget })
    }
}
