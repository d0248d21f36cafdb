// SPDX-License-Identifier: Apache-2.0

//! Deterministic stand-in generators. Each strategy is a pure function of
//! the prompt it is shown and the sampling seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::PromptBundle;
use super::{GenError, Generator};
use crate::seeds::mix_seed;
use crate::simbridge::{SyntheticDesign, DESIGN_FILE};

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn design_file() -> String {
    DESIGN_FILE.into()
}

/// Grows the current testbench by covering more synthetic bins.
///
/// From the empty testbench it covers a seeded number of bins in
/// `[initial_min, initial_max]`; from any other state it adds exactly
/// `bins_per_call` uncovered bins. With `heal`, tokens that are not bins
/// are dropped first, which repairs failing testbenches. With probability
/// `hazard_rate` a hazard token from the design is appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinGreedyParams {
    #[serde(default = "one")]
    pub bins_per_call: usize,
    #[serde(default = "one")]
    pub initial_min: usize,
    #[serde(default = "one")]
    pub initial_max: usize,
    #[serde(default)]
    pub hazard_rate: f64,
    #[serde(default = "yes")]
    pub heal: bool,
    #[serde(default = "design_file")]
    pub design_file: String,
}

impl Default for BinGreedyParams {
    fn default() -> Self {
        Self {
            bins_per_call: 1,
            initial_min: 1,
            initial_max: 1,
            hazard_rate: 0.0,
            heal: true,
            design_file: design_file(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedStrategy {
    /// Always returns `text`.
    Echo { text: String },
    BinGreedy(BinGreedyParams),
}

/// Named strategies, loaded from a TOML manifest:
///
/// ```toml
/// [strategies.student]
/// kind = "bin_greedy"
/// bins_per_call = 1
/// hazard_rate = 0.3
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptManifest {
    #[serde(default)]
    pub strategies: BTreeMap<String, ScriptedStrategy>,
}

impl ScriptManifest {
    pub fn parse(text: &str) -> Result<Self, GenError> {
        toml::from_str(text).map_err(|e| GenError::Config(format!("script manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&ScriptedStrategy, GenError> {
        self.strategies
            .get(name)
            .ok_or_else(|| GenError::UnknownStrategy(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    strategy: ScriptedStrategy,
}

impl ScriptedGenerator {
    pub fn new(strategy: ScriptedStrategy) -> Self {
        Self { strategy }
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<String, GenError> {
        match &self.strategy {
            ScriptedStrategy::Echo { text } => Ok(text.clone()),
            ScriptedStrategy::BinGreedy(p) => Ok(bin_greedy(p, bundle, seed)),
        }
    }
}

fn bin_greedy(p: &BinGreedyParams, bundle: &PromptBundle, seed: u64) -> String {
    let view = bundle.view();
    let Some(design) = view
        .repo_file(&p.design_file)
        .and_then(|t| SyntheticDesign::parse(t).ok())
    else {
        return "```systemverilog\nmodule tb; endmodule\n```".to_string();
    };
    let current = view.current_testbench().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &current));

    let bins: BTreeSet<&str> = design.bins().iter().map(String::as_str).collect();
    let mut tokens: Vec<&str> = Vec::new();
    for t in current.split_whitespace() {
        if (!p.heal || bins.contains(t)) && !tokens.contains(&t) {
            tokens.push(t);
        }
    }
    let mut uncovered: Vec<&str> = design
        .bins()
        .iter()
        .map(String::as_str)
        .filter(|b| !tokens.contains(b))
        .collect();
    let want = if current.trim().is_empty() {
        let lo = p.initial_min.min(p.initial_max);
        rng.gen_range(lo..=p.initial_max.max(lo))
    } else {
        p.bins_per_call
    };
    uncovered.shuffle(&mut rng);
    tokens.extend(uncovered.into_iter().take(want));

    let hazards: Vec<&String> = design.hazard_tokens().iter().collect();
    if p.hazard_rate > 0.0 && !hazards.is_empty() && rng.gen_bool(p.hazard_rate.clamp(0.0, 1.0)) {
        tokens.push(hazards[rng.gen_range(0..hazards.len())]);
    }
    format!(
        "Updated testbench:\n```systemverilog\n{}\n```\n",
        tokens.join(" ")
    )
}
