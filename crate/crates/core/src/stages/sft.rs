// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{recount, DatasetMode, StageDataset, StageError, StageManifest};
use crate::domain::{GenerationMode, TraceType, TransitionRecord};
use crate::genbridge::{fenced, render_memoryless};
use crate::seeds::fingerprint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub repo_id: String,
    pub stage_index: u32,
    pub trace_type: TraceType,
    pub mode: GenerationMode,
    pub delta_cov: f64,
    pub final_cov: f64,
    pub sampler_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<SftMessage>,
    pub meta: SftMeta,
}

impl SftRecord {
    /// Prompt re-rendered from the stored state, never with the specialist
    /// section, followed by the generated testbench as the assistant turn.
    pub fn from_transition(t: &TransitionRecord) -> Self {
        let mut messages: Vec<SftMessage> = render_memoryless(&t.source, None)
            .messages
            .into_iter()
            .map(|m| SftMessage {
                role: m.role.as_str().to_string(),
                content: m.text,
            })
            .collect();
        messages.push(SftMessage {
            role: "assistant".into(),
            content: fenced(&t.generated.text, "systemverilog"),
        });
        Self {
            messages,
            meta: SftMeta {
                repo_id: t.source.repo_id().to_string(),
                stage_index: t.provenance.stage_index,
                trace_type: t.provenance.trace_type,
                mode: t.provenance.mode,
                delta_cov: t.delta_cov,
                final_cov: t.final_coverage(),
                sampler_seed: t.provenance.sampler_seed,
            },
        }
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.content.contains(needle))
    }
}

/// `out/sft.jsonl` → `out/sft.manifest.json`.
pub fn manifest_path_for(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    path.with_file_name(format!("{stem}.manifest.json"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    crate::artifact::write_atomic(path, bytes).map_err(|e| StageError::io(path, e))
}

pub fn write_sft_jsonl(records: &[SftRecord], path: &Path) -> Result<(), StageError> {
    crate::artifact::write_jsonl(path, records).map_err(|e| StageError::io(path, e))
}

/// Writes the JSONL records and the sibling manifest.
pub fn export_sft(dataset: &StageDataset, path: &Path) -> Result<PathBuf, StageError> {
    dataset.validate()?;
    write_sft_jsonl(&dataset.records, path)?;
    let mpath = manifest_path_for(path);
    let mut bytes = serde_json::to_vec_pretty(&dataset.manifest).map_err(|e| StageError::io(&mpath, e))?;
    bytes.push(b'\n');
    write_atomic(&mpath, &bytes)?;
    Ok(mpath)
}

/// Whole dataset (manifest and records) as one JSON document.
pub fn save_dataset(dataset: &StageDataset, path: &Path) -> Result<(), StageError> {
    let mut bytes = serde_json::to_vec(dataset).map_err(|e| StageError::io(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_dataset(path: &Path) -> Result<StageDataset, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
    let ds: StageDataset = serde_json::from_str(&text).map_err(|e| StageError::io(path, e))?;
    ds.validate()?;
    Ok(ds)
}

/// Naive-augmentation baseline: all stages pooled into one dataset.
pub fn union_datasets(datasets: &[StageDataset]) -> Result<StageDataset, StageError> {
    let first = datasets.first().ok_or(StageError::EmptyUnion)?;
    let corpus = &first.manifest.corpus_fingerprint;
    for d in datasets {
        if &d.manifest.corpus_fingerprint != corpus {
            return Err(StageError::CorpusMismatch(
                corpus.clone(),
                d.manifest.corpus_fingerprint.clone(),
            ));
        }
    }
    let records: Vec<SftRecord> = datasets.iter().flat_map(|d| d.records.iter().cloned()).collect();
    let mut ids: Vec<String> = datasets
        .iter()
        .flat_map(|d| d.manifest.source_model_ids.iter().cloned())
        .collect();
    ids.sort();
    ids.dedup();
    let joined: Vec<&str> = datasets
        .iter()
        .map(|d| d.manifest.config_fingerprint.as_str())
        .collect();
    let manifest = StageManifest {
        stage_index: None,
        mode: DatasetMode::NaiveAugmentation,
        constituent_stages: datasets
            .iter()
            .flat_map(|d| d.manifest.constituent_stages.iter().copied())
            .collect(),
        source_model_ids: ids,
        simulator_calls_used: datasets.iter().map(|d| d.manifest.simulator_calls_used).sum(),
        truncated: datasets.iter().any(|d| d.manifest.truncated),
        record_count: records.len(),
        counts: recount(&records),
        config_fingerprint: fingerprint(joined.join(",").as_bytes()),
        corpus_fingerprint: corpus.clone(),
        hyperparameters: serde_json::Value::Array(
            datasets.iter().map(|d| d.manifest.hyperparameters.clone()).collect(),
        ),
    };
    Ok(StageDataset { manifest, records })
}
