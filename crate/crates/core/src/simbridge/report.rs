// SPDX-License-Identifier: Apache-2.0

//! Normalized coverage report contract:
//! `{"metrics": {"<name>": {"covered": <uint>, "total": <uint>}, ...}}`.

use serde_json::Value;

use crate::domain::{MetricCount, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    NormalizedJson,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed coverage report: {0}")]
pub struct MalformedReport(pub String);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedReport {
    pub metrics: Metrics,
    pub warnings: Vec<String>,
}

pub fn parse_coverage_report(
    report_text: &str,
    format: ReportFormat,
) -> Result<ParsedReport, MalformedReport> {
    match format {
        ReportFormat::NormalizedJson => parse_normalized_json(report_text),
    }
}

fn parse_normalized_json(text: &str) -> Result<ParsedReport, MalformedReport> {
    let root: Value = serde_json::from_str(text).map_err(|e| MalformedReport(e.to_string()))?;
    let metrics = root
        .get("metrics")
        .and_then(Value::as_object)
        .ok_or_else(|| MalformedReport("missing `metrics` object".into()))?;
    let mut out = ParsedReport::default();
    for (name, entry) in metrics {
        let field = |key: &str| {
            entry
                .get(key)
                .and_then(Value::as_u64)
                .ok_or_else(|| MalformedReport(format!("metric `{name}`: `{key}` must be an unsigned integer")))
        };
        let covered = field("covered")?;
        let total = field("total")?;
        if total == 0 {
            out.warnings
                .push(format!("metric `{name}` has total 0; dropped"));
            continue;
        }
        let covered = if covered > total {
            out.warnings.push(format!(
                "metric `{name}`: covered {covered} clamped to total {total}"
            ));
            total
        } else {
            covered
        };
        out.metrics
            .insert(name.clone(), MetricCount { covered, total });
    }
    Ok(out)
}
