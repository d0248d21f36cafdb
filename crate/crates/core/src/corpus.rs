// SPDX-License-Identifier: Apache-2.0

//! On-disk corpora and the bundled synthetic fixture.
//!
//! A corpus directory holds one subdirectory per repository (the directory
//! name is the repo id) and an optional `corpus_meta.json` with pass
//! thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, Repository};
use crate::genbridge::{BinGreedyParams, Model, ScriptManifest, ScriptedStrategy};
use crate::seeds::mix_seed;
use crate::simbridge::{SyntheticDesign, DESIGN_FILE};

pub const META_FILE: &str = "corpus_meta.json";
pub const SCRIPTS_FILE: &str = "scripts.toml";
/// Used when a repo has no threshold of its own.
pub const DEFAULT_PASS_THRESHOLD: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("corpus {0} contains no repositories")]
    Empty(String),
}

fn io(path: &Path, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    #[serde(default)]
    pub default_pass_threshold: Option<f64>,
    #[serde(default)]
    pub pass_thresholds: BTreeMap<String, f64>,
}

fn read_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CorpusError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
            continue;
        }
        if p.is_dir() {
            read_tree(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walk stays under root");
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
            out.insert(key, text);
        }
    }
    Ok(())
}

/// Loads every repository under `dir`, sorted by id.
pub fn load_corpus(dir: &Path) -> Result<Vec<Arc<Repository>>, CorpusError> {
    let meta_path = dir.join(META_FILE);
    let meta: CorpusMeta = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| io(&meta_path, e))?;
        serde_json::from_str(&text).map_err(|e| io(&meta_path, e))?
    } else {
        CorpusMeta {
            default_pass_threshold: None,
            pass_thresholds: BTreeMap::new(),
        }
    };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    dirs.sort();
    let mut repos = Vec::new();
    let mut defaulted = 0usize;
    for d in dirs {
        let id = d.file_name().expect("dir has a name").to_string_lossy().into_owned();
        let mut files = BTreeMap::new();
        read_tree(&d, &d, &mut files)?;
        let threshold = match meta.pass_thresholds.get(&id).copied().or(meta.default_pass_threshold) {
            Some(t) => t,
            None => {
                defaulted += 1;
                DEFAULT_PASS_THRESHOLD
            }
        };
        repos.push(Arc::new(Repository::new(id, files, threshold)?));
    }
    if defaulted > 0 {
        tracing::warn!(
            "{defaulted} repo(s) in {} have no pass threshold; using {DEFAULT_PASS_THRESHOLD}",
            dir.display()
        );
    }
    if repos.is_empty() {
        return Err(CorpusError::Empty(dir.display().to_string()));
    }
    Ok(repos)
}

/// Writes `repos` in the layout [`load_corpus`] reads.
pub fn save_corpus(dir: &Path, repos: &[Arc<Repository>]) -> Result<(), CorpusError> {
    let mut meta = CorpusMeta {
        default_pass_threshold: None,
        pass_thresholds: BTreeMap::new(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for r in repos {
        for (path, text) in &r.files {
            let p = dir.join(&r.id).join(path);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
            }
            std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        }
        meta.pass_thresholds.insert(r.id.clone(), r.pass_threshold);
    }
    let mp = dir.join(META_FILE);
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    bytes.push(b'\n');
    std::fs::write(&mp, bytes).map_err(|e| io(&mp, e))
}

/// Shape of the generated synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureParams {
    pub repos: usize,
    pub min_bins: usize,
    pub max_bins: usize,
    /// Probability that the student's drafts carry a hazard token.
    pub hazard_density: f64,
    pub pass_threshold: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            repos: 20,
            min_bins: 5,
            max_bins: 10,
            hazard_density: 0.3,
            pass_threshold: DEFAULT_PASS_THRESHOLD,
        }
    }
}

const RTL_WORDS: [&str; 12] = [
    "assign", "wire", "logic", "always_ff", "posedge", "clk", "begin", "end", "if", "else", "<=", "reg",
];

fn rtl_body(id: &str, lines: usize, rng: &mut ChaCha8Rng) -> String {
    let mut s = format!("module {id} (input logic clk, input logic rst_n);\n");
    for i in 0..lines {
        let w: Vec<&str> = (0..5).map(|_| *RTL_WORDS.choose(rng).unwrap()).collect();
        s.push_str(&format!("  {} sig_{i};\n", w.join(" ")));
    }
    s.push_str("endmodule\n");
    s
}

/// Deterministic synthetic corpus: each repo has a `design.cov` with its
/// coverage bins and an RTL file whose length varies, so roughly half
/// the repos exceed 1000 tokens.
pub fn synthetic_corpus(params: &FixtureParams, seed: u64) -> Result<Vec<Arc<Repository>>, CorpusError> {
    (0..params.repos)
        .map(|i| {
            let id = format!("syn{i:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &id));
            let n_bins = rng.gen_range(params.min_bins..=params.max_bins.max(params.min_bins));
            let bins = (0..n_bins).map(|j| format!("cp_{i}_{j}")).collect();
            let design = SyntheticDesign::new(
                bins,
                BTreeSet::from([format!("HAZ_{i}")]),
                BTreeSet::from([format!("TRAP_{i}")]),
            )
            .expect("generated tokens are disjoint");
            let lines = if rng.gen_bool(0.5) {
                rng.gen_range(10..120)
            } else {
                rng.gen_range(220..400)
            };
            let mut files = BTreeMap::new();
            files.insert(DESIGN_FILE.to_string(), design.render());
            files.insert(format!("rtl/{id}.sv"), rtl_body(&id, lines, &mut rng));
            Ok(Arc::new(Repository::new(id, files, params.pass_threshold)?))
        })
        .collect()
}

pub const TEACHER_STRATEGY: &str = "teacher";
pub const STUDENT_STRATEGY: &str = "student";

/// Scripted stand-ins: a teacher that repairs and adds two bins per call,
/// and a weaker student that adds one bin and sometimes breaks the build.
pub fn fixture_scripts(hazard_density: f64) -> ScriptManifest {
    let mut strategies = BTreeMap::new();
    strategies.insert(
        TEACHER_STRATEGY.to_string(),
        ScriptedStrategy::BinGreedy(BinGreedyParams {
            bins_per_call: 2,
            initial_min: 2,
            initial_max: 4,
            hazard_rate: 0.0,
            heal: true,
            ..Default::default()
        }),
    );
    strategies.insert(
        STUDENT_STRATEGY.to_string(),
        ScriptedStrategy::BinGreedy(BinGreedyParams {
            bins_per_call: 1,
            initial_min: 1,
            initial_max: 3,
            hazard_rate: hazard_density,
            heal: false,
            ..Default::default()
        }),
    );
    ScriptManifest { strategies }
}

/// `(teacher, student)` models bound to [`fixture_scripts`].
pub fn fixture_models(hazard_density: f64) -> (Model, Model) {
    let s = fixture_scripts(hazard_density);
    (
        Model::scripted(TEACHER_STRATEGY, s.strategies[TEACHER_STRATEGY].clone()),
        Model::scripted(STUDENT_STRATEGY, s.strategies[STUDENT_STRATEGY].clone()),
    )
}
