// SPDX-License-Identifier: Apache-2.0

//! Benchmark-contamination filtering by file-level ROUGE-L.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Repository;

/// Recorded in every report so scores can be reproduced.
pub const TOKENIZATION: &str = "lowercase, split on unicode whitespace";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DedupError {
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    /// Harmonic mean of LCS precision and recall.
    #[default]
    F1,
    /// LCS length over the benchmark file's length.
    Recall,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Longest common subsequence length, two rows of memory.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

fn score(variant: RougeVariant, lcs: usize, la: usize, lb: usize) -> f64 {
    if la == 0 || lb == 0 || lcs == 0 {
        return 0.0;
    }
    let l = lcs as f64;
    match variant {
        RougeVariant::F1 => {
            let p = l / la as f64;
            let r = l / lb as f64;
            2.0 * p * r / (p + r)
        }
        RougeVariant::Recall => l / lb as f64,
    }
}

/// ROUGE-L F1 between token sequences `a` (candidate) and `b` (reference).
pub fn rouge_l<T: Eq>(a: &[T], b: &[T]) -> f64 {
    rouge_l_with(RougeVariant::F1, a, b)
}

pub fn rouge_l_with<T: Eq>(variant: RougeVariant, a: &[T], b: &[T]) -> f64 {
    score(variant, lcs_len(a, b), a.len(), b.len())
}

/// Upper bound on the score for the given lengths, reached when the
/// shorter sequence is a subsequence of the longer one.
pub fn max_possible(variant: RougeVariant, la: usize, lb: usize) -> f64 {
    score(variant, la.min(lb), la, lb)
}

/// True when no pair of these lengths can reach `threshold`.
pub fn prefilter_skips(variant: RougeVariant, la: usize, lb: usize, threshold: f64) -> bool {
    // Slack keeps float rounding in the bound from ever skipping a true hit.
    max_possible(variant, la, lb) + 1e-9 < threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub threshold: f64,
    #[serde(default)]
    pub variant: RougeVariant,
    #[serde(default = "yes")]
    pub length_prefilter: bool,
}

fn yes() -> bool {
    true
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            variant: RougeVariant::F1,
            length_prefilter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub corpus_repo_id: String,
    pub corpus_path: String,
    pub benchmark_repo_id: String,
    pub benchmark_path: String,
    pub rouge_l_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub tokenization: String,
    pub variant: RougeVariant,
    pub threshold: f64,
    pub pairs: Vec<SimilarityPair>,
    pub removed_repo_ids: BTreeSet<String>,
    pub pairs_scored: u64,
    pub pairs_skipped: u64,
}

struct FileTokens<'a> {
    repo: &'a str,
    path: &'a str,
    tokens: Vec<u32>,
}

fn intern<'a>(repos: &'a [Arc<Repository>], table: &mut HashMap<String, u32>) -> Vec<FileTokens<'a>> {
    let mut out = Vec::new();
    for r in repos {
        for (path, text) in &r.files {
            let tokens = tokenize(text)
                .into_iter()
                .map(|t| {
                    let next = table.len() as u32;
                    *table.entry(t).or_insert(next)
                })
                .collect();
            out.push(FileTokens {
                repo: &r.id,
                path,
                tokens,
            });
        }
    }
    out
}

/// Drops every corpus repo with a file scoring ≥ threshold against any
/// benchmark file. Output order follows the input corpus; report pairs are
/// ordered by (corpus repo, corpus path, benchmark repo, benchmark path).
pub fn filter_corpus(
    corpus: &[Arc<Repository>],
    benchmark: &[Arc<Repository>],
    config: &DedupConfig,
) -> Result<(Vec<Arc<Repository>>, SimilarityReport), DedupError> {
    let t = config.threshold;
    if !(t > 0.0 && t <= 1.0) {
        return Err(DedupError::BadThreshold(t));
    }
    let mut table = HashMap::new();
    let cfiles = intern(corpus, &mut table);
    let bfiles = intern(benchmark, &mut table);

    let per_file: Vec<(Vec<SimilarityPair>, u64, u64)> = cfiles
        .par_iter()
        .map(|cf| {
            let mut pairs = Vec::new();
            let (mut scored, mut skipped) = (0u64, 0u64);
            for bf in &bfiles {
                if config.length_prefilter
                    && prefilter_skips(config.variant, cf.tokens.len(), bf.tokens.len(), t)
                {
                    skipped += 1;
                    continue;
                }
                scored += 1;
                let s = rouge_l_with(config.variant, &cf.tokens, &bf.tokens);
                if s >= t {
                    pairs.push(SimilarityPair {
                        corpus_repo_id: cf.repo.to_string(),
                        corpus_path: cf.path.to_string(),
                        benchmark_repo_id: bf.repo.to_string(),
                        benchmark_path: bf.path.to_string(),
                        rouge_l_f: s,
                    });
                }
            }
            (pairs, scored, skipped)
        })
        .collect();

    let mut pairs = Vec::new();
    let (mut scored, mut skipped) = (0, 0);
    for (p, s, k) in per_file {
        pairs.extend(p);
        scored += s;
        skipped += k;
    }
    pairs.sort_by(|a, b| {
        (&a.corpus_repo_id, &a.corpus_path, &a.benchmark_repo_id, &a.benchmark_path).cmp(&(
            &b.corpus_repo_id,
            &b.corpus_path,
            &b.benchmark_repo_id,
            &b.benchmark_path,
        ))
    });
    let removed: BTreeSet<String> = pairs.iter().map(|p| p.corpus_repo_id.clone()).collect();
    let clean = corpus
        .iter()
        .filter(|r| !removed.contains(&r.id))
        .cloned()
        .collect();
    Ok((
        clean,
        SimilarityReport {
            tokenization: TOKENIZATION.to_string(),
            variant: config.variant,
            threshold: t,
            pairs,
            removed_repo_ids: removed,
            pairs_scored: scored,
            pairs_skipped: skipped,
        },
    ))
}
