// SPDX-License-Identifier: Apache-2.0

//! Progressive stage datasets.
//!
//! Stage `k` synthesizes supervision from states the stage-`k` student
//! actually reaches, filters it by coverage gain, and exports it as chat
//! SFT records. Training happens elsewhere.

mod registry;
mod sft;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use registry::{StageEntry, StageRegistry};
pub use sft::{
    export_sft, load_dataset, manifest_path_for, save_dataset, union_datasets, write_sft_jsonl,
    SftMessage, SftMeta, SftRecord,
};

use crate::domain::{GenerationMode, Repository, TraceType, TransitionRecord};
use crate::genbridge::{GenError, Model};
use crate::seeds::{fingerprint, mix_seed};
use crate::simbridge::Simulator;
use crate::synth::{
    synthesize_corpus, PromptSink, RejectionPolicy, SelectionPolicy, SynthContext, SynthError,
    TraceConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("datasets come from different corpora ({0} vs {1})")]
    CorpusMismatch(String, String),
    #[error("cannot take the union of zero datasets")]
    EmptyUnion,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("stage registry: {0}")]
    Registry(String),
    #[error("invalid stage spec: {0}")]
    Config(String),
}

impl StageError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        StageError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

fn default_limit() -> usize {
    1000
}
fn third() -> f64 {
    1.0 / 3.0
}
fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RebalanceRule {
    #[serde(default = "default_limit")]
    pub short_context_limit: usize,
    #[serde(default = "third")]
    pub keep_fraction_direct: f64,
    #[serde(default = "half")]
    pub keep_fraction_agentic: f64,
}

impl Default for RebalanceRule {
    fn default() -> Self {
        Self {
            short_context_limit: default_limit(),
            keep_fraction_direct: third(),
            keep_fraction_agentic: half(),
        }
    }
}

impl RebalanceRule {
    pub fn validate(&self) -> Result<(), StageError> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if self.short_context_limit == 0
            || !ok(self.keep_fraction_direct)
            || !ok(self.keep_fraction_agentic)
        {
            return Err(StageError::Config(
                "rebalance needs limit > 0 and fractions in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Retained count for a group of `n` under fraction `f`, rounded up.
pub fn retained(n: usize, f: f64) -> usize {
    // Guard against 3 * (1/3) landing a hair above 1.
    let x = n as f64 * f;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Downsamples short-context records by mode; long-context records are kept.
///
/// `context_lengths` maps repo id to its token count. Output is ordered by
/// `(repo_id, sampler_seed)`.
pub fn rebalance(
    records: Vec<SftRecord>,
    rule: &RebalanceRule,
    context_lengths: &BTreeMap<String, usize>,
    seed: u64,
) -> Vec<SftRecord> {
    let is_short = |r: &SftRecord| {
        context_lengths
            .get(&r.meta.repo_id)
            .is_some_and(|&c| c <= rule.short_context_limit)
    };
    let mut keep = vec![false; records.len()];
    for (mode, frac) in [
        (GenerationMode::Direct, rule.keep_fraction_direct),
        (GenerationMode::Agentic, rule.keep_fraction_agentic),
    ] {
        let group: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].meta.mode == mode && is_short(&records[i]))
            .collect();
        let k = retained(group.len(), frac);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &format!("rebalance/{mode}")));
        for j in sample(&mut rng, group.len(), k) {
            keep[group[j]] = true;
        }
    }
    let mut out: Vec<SftRecord> = records
        .into_iter()
        .zip(keep)
        .filter(|(r, k)| *k || !is_short(r))
        .map(|(r, _)| r)
        .collect();
    sort_records(&mut out);
    out
}

pub(crate) fn sort_records(records: &mut [SftRecord]) {
    records.sort_by(|a, b| {
        (&a.meta.repo_id, a.meta.sampler_seed).cmp(&(&b.meta.repo_id, b.meta.sampler_seed))
    });
}

fn two() -> usize {
    2
}
fn five() -> usize {
    5
}
fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_index: u32,
    pub trace_type: TraceType,
    pub rejection: RejectionPolicy,
    pub selection: SelectionPolicy,
    pub rebalance: Option<RebalanceRule>,
    pub include_direct: bool,
    pub specialist_prompt: bool,
    #[serde(default = "two")]
    pub trajectory_length: usize,
    #[serde(default = "five")]
    pub candidates_per_state: usize,
    #[serde(default = "four")]
    pub transitions_per_state: usize,
}

impl StageSpec {
    /// Stage defaults: 0 is the full-teacher warmup with the specialist
    /// prompt and rebalancing, 1 imitation, 2 and later self-sampling.
    pub fn default_for(stage_index: u32) -> Self {
        let warmup = stage_index == 0;
        Self {
            stage_index,
            trace_type: match stage_index {
                0 => TraceType::FullTeacher,
                1 => TraceType::Imitation,
                _ => TraceType::SelfSampling,
            },
            rejection: if warmup {
                RejectionPolicy::stage0()
            } else {
                RejectionPolicy::default()
            },
            selection: SelectionPolicy::worst(),
            rebalance: warmup.then(RebalanceRule::default),
            include_direct: stage_index <= 1,
            specialist_prompt: warmup,
            trajectory_length: 2,
            candidates_per_state: 5,
            transitions_per_state: 4,
        }
    }

    pub fn validate(&self) -> Result<(), StageError> {
        self.rejection.validate()?;
        self.selection.validate()?;
        if let Some(r) = &self.rebalance {
            r.validate()?;
        }
        if self.trajectory_length < 2 {
            return Err(StageError::Config(
                "stage trajectory length must be at least 2; direct records come from include_direct".into(),
            ));
        }
        Ok(())
    }

    fn fingerprint(&self, models: &StageModels, seed: u64) -> String {
        let doc = serde_json::json!({
            "spec": self,
            "teacher": models.teacher.handle(),
            "student": models.student.handle(),
            "seed": seed,
        });
        fingerprint(doc.to_string().as_bytes())
    }
}

/// The two models a stage runs with. At stage 0 the student is unused.
#[derive(Debug, Clone)]
pub struct StageModels {
    pub teacher: Model,
    pub student: Model,
}

/// Reference SFT hyperparameters, carried in manifests for provenance only.
pub fn reference_sft_hyperparameters() -> serde_json::Value {
    serde_json::json!({
        "learning_rate": 1e-05,
        "train_batch_size": 1,
        "eval_batch_size": 8,
        "seed": 42,
        "distributed_type": "multi-GPU",
        "num_devices": 4,
        "gradient_accumulation_steps": 6,
        "total_train_batch_size": 24,
        "total_eval_batch_size": 32,
        "optimizer": "adamw_torch betas=(0.9,0.999) epsilon=1e-08",
        "lr_scheduler_type": "cosine",
        "lr_scheduler_warmup_ratio": 0.03,
        "num_epochs": 1.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    Progressive,
    NaiveAugmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    /// `None` for unions.
    pub stage_index: Option<u32>,
    pub mode: DatasetMode,
    pub constituent_stages: Vec<u32>,
    pub source_model_ids: Vec<String>,
    pub simulator_calls_used: u64,
    pub truncated: bool,
    pub record_count: usize,
    /// Keyed `"<mode>/<trace_type>"`.
    pub counts: BTreeMap<String, usize>,
    pub config_fingerprint: String,
    pub corpus_fingerprint: String,
    pub hyperparameters: serde_json::Value,
}

pub fn count_key(mode: GenerationMode, trace_type: TraceType) -> String {
    format!("{mode}/{trace_type}")
}

pub fn recount(records: &[SftRecord]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(count_key(r.meta.mode, r.meta.trace_type)).or_default() += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDataset {
    pub manifest: StageManifest,
    pub records: Vec<SftRecord>,
}

impl StageDataset {
    pub fn validate(&self) -> Result<(), StageError> {
        if self.manifest.record_count != self.records.len()
            || self.manifest.counts != recount(&self.records)
        {
            return Err(StageError::Config("manifest counts disagree with records".into()));
        }
        Ok(())
    }

    /// Share of records with the given trace type; 0 for an empty dataset.
    pub fn trace_share(&self, trace_type: TraceType) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self
            .records
            .iter()
            .filter(|r| r.meta.trace_type == trace_type)
            .count();
        n as f64 / self.records.len() as f64
    }
}

/// Stable content hash of a corpus, independent of input order.
pub fn corpus_fingerprint(corpus: &[Arc<Repository>]) -> String {
    let mut repos: Vec<&Repository> = corpus.iter().map(|r| r.as_ref()).collect();
    repos.sort_by(|a, b| a.id.cmp(&b.id));
    let bytes = serde_json::to_vec(&repos).expect("repositories serialize");
    fingerprint(&bytes)
}

/// Run-level knobs shared by every stage build.
#[derive(Clone)]
pub struct BuildOptions {
    pub simulator: Simulator,
    pub seed: u64,
    pub workers: usize,
    pub prompt_sink: Option<Arc<dyn PromptSink>>,
}

/// Builds `D^(k)` over `corpus`.
///
/// Agentic records come from a full `N`-step synthesis under the stage's
/// trace type. Direct records, when enabled, are single transitions from
/// `s_0` by the stage's intermediate model and carry the trace type of
/// that model alone (full-teacher for the teacher, self-sampling for the
/// student).
pub fn build_stage_dataset(
    corpus: &[Arc<Repository>],
    spec: &StageSpec,
    models: &StageModels,
    opts: &BuildOptions,
) -> Result<StageDataset, StageError> {
    build_stage(corpus, spec, models, opts).map(|b| b.dataset)
}

/// A built dataset plus the accepted transitions behind it, ordered by
/// `(repo_id, sampler_seed)` and taken before rebalancing.
#[derive(Debug, Clone)]
pub struct StageBuild {
    pub dataset: StageDataset,
    pub transitions: Vec<TransitionRecord>,
}

pub fn build_stage(
    corpus: &[Arc<Repository>],
    spec: &StageSpec,
    models: &StageModels,
    opts: &BuildOptions,
) -> Result<StageBuild, StageError> {
    spec.validate()?;
    let specialist = if spec.specialist_prompt {
        models.teacher.handle().specialist_text(true)?
    } else {
        None
    };
    let mut ctx = SynthContext::new(opts.simulator.clone(), spec.stage_index).with_specialist(specialist);
    if let Some(sink) = &opts.prompt_sink {
        ctx = ctx.with_prompt_sink(sink.clone());
    }
    let agentic_cfg = TraceConfig::from_roles(
        spec.trace_type,
        &models.teacher,
        &models.student,
        spec.trajectory_length,
        spec.candidates_per_state,
        spec.transitions_per_state,
    );
    agentic_cfg.check_roles(models.teacher.id(), models.student.id())?;
    let stage_seed = mix_seed(opts.seed, &format!("stage/{}", spec.stage_index));

    let mut runs = vec![synthesize_corpus(
        corpus,
        &agentic_cfg,
        &spec.selection,
        &spec.rejection,
        &ctx,
        mix_seed(stage_seed, "agentic"),
        opts.workers,
    )?];
    if spec.include_direct {
        let m = &agentic_cfg.intermediate_model;
        let direct_type = if m.id() == models.teacher.id() {
            TraceType::FullTeacher
        } else {
            TraceType::SelfSampling
        };
        let direct_cfg = TraceConfig::from_roles(
            direct_type,
            m,
            m,
            1,
            1,
            spec.transitions_per_state,
        );
        runs.push(synthesize_corpus(
            corpus,
            &direct_cfg,
            &spec.selection,
            &spec.rejection,
            &ctx,
            mix_seed(stage_seed, "direct"),
            opts.workers,
        )?);
    }

    let mut transitions: Vec<TransitionRecord> = runs.iter().flat_map(|r| r.accepted()).cloned().collect();
    transitions.sort_by(|a, b| {
        (a.source.repo_id(), a.provenance.sampler_seed).cmp(&(b.source.repo_id(), b.provenance.sampler_seed))
    });
    let mut records: Vec<SftRecord> = transitions.iter().map(SftRecord::from_transition).collect();
    sort_records(&mut records);
    if let Some(rule) = &spec.rebalance {
        let lengths = corpus.iter().map(|r| (r.id.clone(), r.context_length)).collect();
        records = rebalance(records, rule, &lengths, mix_seed(stage_seed, "rebalance"));
    }

    let mut ids = vec![
        agentic_cfg.intermediate_model.id().to_string(),
        agentic_cfg.transition_model.id().to_string(),
    ];
    ids.sort();
    ids.dedup();
    let manifest = StageManifest {
        stage_index: Some(spec.stage_index),
        mode: DatasetMode::Progressive,
        constituent_stages: vec![spec.stage_index],
        source_model_ids: ids,
        simulator_calls_used: runs.iter().map(|r| r.simulator_calls()).sum(),
        truncated: runs.iter().any(|r| r.truncated),
        record_count: records.len(),
        counts: recount(&records),
        config_fingerprint: spec.fingerprint(models, opts.seed),
        corpus_fingerprint: corpus_fingerprint(corpus),
        hyperparameters: serde_json::json!({
            "stage": spec,
            "sft_reference": reference_sft_hyperparameters(),
        }),
    };
    Ok(StageBuild {
        dataset: StageDataset { manifest, records },
        transitions,
    })
}
