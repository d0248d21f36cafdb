// SPDX-License-Identifier: Apache-2.0

//! Deterministic stand-in for a hardware design. A design is a list of
//! coverage bins (keywords a testbench must mention) plus tokens that make
//! compilation or simulation fail.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::domain::{FeedbackObservation, MetricCount, Metrics, Repository, SimStatus};

/// Repository file holding the synthetic design description.
pub const DESIGN_FILE: &str = "design.cov";

/// Metric name reported by the synthetic backend.
pub const BINS_METRIC: &str = "bins";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DesignError {
    #[error("design has no bins")]
    NoBins,
    #[error("duplicate bin `{0}`")]
    DuplicateBin(String),
    #[error("token `{0}` appears in more than one token class")]
    Overlap(String),
    #[error("design line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("repository `{0}` has no `{DESIGN_FILE}` file")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticDesign {
    bins: Vec<String>,
    hazard_tokens: BTreeSet<String>,
    runtime_trap_tokens: BTreeSet<String>,
}

impl SyntheticDesign {
    pub fn new(
        bins: Vec<String>,
        hazard_tokens: BTreeSet<String>,
        runtime_trap_tokens: BTreeSet<String>,
    ) -> Result<Self, DesignError> {
        if bins.is_empty() {
            return Err(DesignError::NoBins);
        }
        let mut seen = BTreeSet::new();
        for b in &bins {
            if !seen.insert(b.as_str()) {
                return Err(DesignError::DuplicateBin(b.clone()));
            }
            if hazard_tokens.contains(b) || runtime_trap_tokens.contains(b) {
                return Err(DesignError::Overlap(b.clone()));
            }
        }
        if let Some(t) = hazard_tokens.intersection(&runtime_trap_tokens).next() {
            return Err(DesignError::Overlap(t.clone()));
        }
        Ok(Self {
            bins,
            hazard_tokens,
            runtime_trap_tokens,
        })
    }

    pub fn bins(&self) -> &[String] {
        &self.bins
    }

    pub fn hazard_tokens(&self) -> &BTreeSet<String> {
        &self.hazard_tokens
    }

    pub fn runtime_trap_tokens(&self) -> &BTreeSet<String> {
        &self.runtime_trap_tokens
    }

    /// Parses the line format
    ///
    /// ```text
    /// bins: A B C
    /// hazards: H
    /// traps: T
    /// ```
    ///
    /// Blank lines and `#` comments are skipped; `hazards` and `traps` are optional.
    pub fn parse(text: &str) -> Result<Self, DesignError> {
        let mut bins = None;
        let mut hazards = BTreeSet::new();
        let mut traps = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, rest)) = line.split_once(':') else {
                return Err(DesignError::Syntax {
                    line: i + 1,
                    msg: "expected `key: tokens`".into(),
                });
            };
            let tokens = rest.split_whitespace().map(str::to_string);
            match key.trim() {
                "bins" => bins = Some(tokens.collect::<Vec<_>>()),
                "hazards" => hazards.extend(tokens),
                "traps" => traps.extend(tokens),
                other => {
                    return Err(DesignError::Syntax {
                        line: i + 1,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        Self::new(bins.unwrap_or_default(), hazards, traps)
    }

    pub fn from_repo(repo: &Repository, design_file: &str) -> Result<Self, DesignError> {
        let text = repo
            .files
            .get(design_file)
            .ok_or_else(|| DesignError::Missing(repo.id.clone()))?;
        Self::parse(text)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bins: {}", self.bins.join(" "));
        if !self.hazard_tokens.is_empty() {
            let v: Vec<&str> = self.hazard_tokens.iter().map(String::as_str).collect();
            let _ = writeln!(out, "hazards: {}", v.join(" "));
        }
        if !self.runtime_trap_tokens.is_empty() {
            let v: Vec<&str> = self.runtime_trap_tokens.iter().map(String::as_str).collect();
            let _ = writeln!(out, "traps: {}", v.join(" "));
        }
        out
    }
}

/// Pure kernel of the synthetic backend.
pub fn synthetic_rules(design: &SyntheticDesign, testbench_text: &str) -> FeedbackObservation {
    let tokens: BTreeSet<&str> = testbench_text.split_whitespace().collect();
    if let Some(t) = tokens
        .iter()
        .find(|t| design.hazard_tokens.contains(**t))
    {
        return FeedbackObservation::failure(
            SimStatus::CompileError,
            format!("*E,SYNHAZ: illegal construct `{t}`"),
        );
    }
    if let Some(t) = tokens
        .iter()
        .find(|t| design.runtime_trap_tokens.contains(**t))
    {
        return FeedbackObservation::failure(
            SimStatus::RuntimeError,
            format!("*F,SYNTRAP: simulation aborted at `{t}`"),
        );
    }
    if tokens.is_empty() {
        return FeedbackObservation::failure(SimStatus::CompileError, "*E,EMPTY: empty testbench");
    }
    let (hit, missed): (Vec<&String>, Vec<&String>) = design
        .bins
        .iter()
        .partition(|b| tokens.contains(b.as_str()));
    let mut metrics = Metrics::new();
    metrics.insert(
        BINS_METRIC.to_string(),
        MetricCount {
            covered: hit.len() as u64,
            total: design.bins.len() as u64,
        },
    );
    let join = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
    let log = format!("hit: {}\nmissed: {}", join(&hit), join(&missed));
    FeedbackObservation::success(metrics, log).expect("covered never exceeds total")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::coverage_score;

    fn design(bins: &[&str], hazards: &[&str], traps: &[&str]) -> SyntheticDesign {
        SyntheticDesign::new(
            bins.iter().map(|s| s.to_string()).collect(),
            hazards.iter().map(|s| s.to_string()).collect(),
            traps.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_distinct_bins() {
        let d = design(&["A", "B", "C", "D", "E"], &[], &[]);
        let o = synthetic_rules(&d, "A B C");
        assert_eq!(o.status, SimStatus::Success);
        assert_eq!(o.metrics[BINS_METRIC], MetricCount { covered: 3, total: 5 });

        let d = design(&["A"], &[], &[]);
        let o = synthetic_rules(&d, "A A A");
        assert_eq!(o.metrics[BINS_METRIC], MetricCount { covered: 1, total: 1 });
    }

    #[test]
    fn failure_classes() {
        let d = design(&["A", "B", "C"], &["H"], &["T"]);
        assert_eq!(synthetic_rules(&d, "").status, SimStatus::CompileError);
        assert_eq!(synthetic_rules(&d, "A H").status, SimStatus::CompileError);
        assert_eq!(synthetic_rules(&d, "A T").status, SimStatus::RuntimeError);
        // hazard wins over trap
        assert_eq!(synthetic_rules(&d, "T H").status, SimStatus::CompileError);
        let o = synthetic_rules(&d, "A C");
        assert!((coverage_score(&o) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(o.log, "hit: A C\nmissed: B");
    }

    #[test]
    fn parse_and_render() {
        let text = "# demo\nbins: X Y Z\nhazards: BAD\ntraps: HANG\n";
        let d = SyntheticDesign::parse(text).unwrap();
        assert_eq!(d.bins(), ["X", "Y", "Z"]);
        assert_eq!(SyntheticDesign::parse(&d.render()).unwrap(), d);
        assert_eq!(SyntheticDesign::parse("hazards: H"), Err(DesignError::NoBins));
        assert!(matches!(
            SyntheticDesign::parse("bins: A\nhazards: A"),
            Err(DesignError::Overlap(_))
        ));
        assert!(matches!(
            SyntheticDesign::parse("bins A"),
            Err(DesignError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn referentially_transparent() {
        let d = design(&["A", "B"], &["H"], &[]);
        let a = serde_json::to_vec(&synthetic_rules(&d, "B x A")).unwrap();
        let b = serde_json::to_vec(&synthetic_rules(&d, "B x A")).unwrap();
        assert_eq!(a, b);
    }
}
