// SPDX-License-Identifier: Apache-2.0

//! Comparison tables over `eval` metrics files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use covforge_core::artifact::write_atomic;
use serde::Deserialize;

use crate::manifest::{sidecar, RunRecorder};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `metrics.json` files; the first of each mode is the baseline unless
    /// `--baseline` names a model present in that mode.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct MetricsFile {
    model: String,
    mode: String,
    metrics: BTreeMap<String, f64>,
}

struct Row<'a> {
    model: &'a str,
    cov_pass: f64,
    avg_cov: f64,
}

fn cov_pass_key(m: &BTreeMap<String, f64>) -> Option<&String> {
    m.keys().find(|k| k.starts_with("Cov Pass"))
}

fn fmt_delta(d: f64) -> String {
    format!("{d:+.4}")
}

fn render_section(title: &str, rows: &[Row<'_>], baseline: usize, cov_label: &str) -> String {
    let with_delta = rows.len() > 1;
    let w = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max("model".len());
    let mut s = format!("{title}\n");
    if with_delta {
        let _ = writeln!(s, "{:<w$}  {:>10}  {:>8}  {:>8}  {:>8}", "model", cov_label, "Δ", "Avg Cov", "Δ");
    } else {
        let _ = writeln!(s, "{:<w$}  {:>10}  {:>8}", "model", cov_label, "Avg Cov");
    }
    let base = &rows[baseline];
    for (i, r) in rows.iter().enumerate() {
        if !with_delta {
            let _ = writeln!(s, "{:<w$}  {:>10.4}  {:>8.4}", r.model, r.cov_pass, r.avg_cov);
            continue;
        }
        let (dc, da) = if i == baseline {
            ("-".to_string(), "-".to_string())
        } else {
            (fmt_delta(r.cov_pass - base.cov_pass), fmt_delta(r.avg_cov - base.avg_cov))
        };
        let _ = writeln!(
            s,
            "{:<w$}  {:>10.4}  {:>8}  {:>8.4}  {:>8}",
            r.model, r.cov_pass, dc, r.avg_cov, da
        );
    }
    s
}

pub fn render(files: &[(PathBuf, String)], baseline: Option<&str>) -> Result<String> {
    let parsed: Vec<(PathBuf, MetricsFile)> = files
        .iter()
        .map(|(p, text)| {
            serde_json::from_str(text)
                .with_context(|| format!("parsing {}", p.display()))
                .map(|m| (p.clone(), m))
        })
        .collect::<Result<_>>()?;
    if let Some(name) = baseline {
        if !parsed.iter().any(|(_, m)| m.model == name) {
            bail!("baseline `{name}` matches no metrics file");
        }
    }
    let reference: BTreeSet<&String> = parsed[0].1.metrics.keys().collect();
    let mut problems = Vec::new();
    for (p, m) in &parsed[1..] {
        let keys: BTreeSet<&String> = m.metrics.keys().collect();
        let missing: Vec<&str> = reference.difference(&keys).map(|s| s.as_str()).collect();
        let extra: Vec<&str> = keys.difference(&reference).map(|s| s.as_str()).collect();
        if !missing.is_empty() || !extra.is_empty() {
            problems.push(format!(
                "{}: missing [{}], unexpected [{}]",
                p.display(),
                missing.join(", "),
                extra.join(", ")
            ));
        }
    }
    if !problems.is_empty() {
        bail!("metric keys differ from {}:\n  {}", parsed[0].0.display(), problems.join("\n  "));
    }
    let Some(cov_label) = cov_pass_key(&parsed[0].1.metrics).cloned() else {
        bail!("{} has no Cov Pass metric", parsed[0].0.display());
    };
    if !reference.iter().any(|k| k.as_str() == "Avg Cov") {
        bail!("{} has no Avg Cov metric", parsed[0].0.display());
    }

    let mut out = String::new();
    for mode in ["agentic", "direct"] {
        let rows: Vec<Row<'_>> = parsed
            .iter()
            .filter(|(_, m)| m.mode == mode)
            .map(|(_, m)| Row {
                model: &m.model,
                cov_pass: m.metrics[&cov_label],
                avg_cov: m.metrics["Avg Cov"],
            })
            .collect();
        if rows.is_empty() {
            continue;
        }
        // A section without the named baseline compares against its first row.
        let b = baseline
            .and_then(|name| rows.iter().position(|r| r.model == name))
            .unwrap_or(0);
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&render_section(&format!("[{mode}]"), &rows, b, &cov_label));
    }
    if out.is_empty() {
        bail!("no agentic or direct metrics among the inputs");
    }
    Ok(out)
}

pub fn run(a: ReportArgs) -> Result<Outcome> {
    let mut rec = RunRecorder::start();
    let mut files = Vec::new();
    for p in &a.metrics {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        rec.config_input("metrics", text.as_bytes());
        files.push((p.clone(), text));
    }
    let table = render(&files, a.baseline.as_deref())?;
    write_atomic(&a.out, table.as_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{table}");
    rec.output(a.out.clone());
    rec.finish(&sidecar(&a.out))?;
    Ok(Outcome::Done)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(model: &str, mode: &str, cov: f64, avg: f64) -> (PathBuf, String) {
        (
            PathBuf::from(format!("{model}-{mode}.json")),
            format!(r#"{{"model":"{model}","mode":"{mode}","metrics":{{"Cov Pass@1":{cov},"Sim Pass@1":1.0,"Avg Cov":{avg}}}}}"#),
        )
    }

    #[test]
    fn deltas_are_candidate_minus_base() {
        let t = render(&[file("base", "agentic", 0.25, 0.5), file("cand", "agentic", 0.75, 0.625)], None).unwrap();
        assert!(t.contains("+0.5000"), "{t}");
        assert!(t.contains("+0.1250"), "{t}");
        assert!(t.contains('Δ'));
    }

    #[test]
    fn single_file_has_no_delta() {
        let t = render(&[file("base", "direct", 0.25, 0.5)], None).unwrap();
        assert!(!t.contains('Δ'));
        assert!(t.contains("[direct]"));
        assert!(!t.contains("[agentic]"));
    }

    #[test]
    fn sections_and_named_baseline() {
        let t = render(
            &[
                file("a", "agentic", 0.5, 0.5),
                file("b", "agentic", 0.25, 0.5),
                file("a", "direct", 0.25, 0.25),
            ],
            Some("b"),
        )
        .unwrap();
        assert!(t.find("[agentic]").unwrap() < t.find("[direct]").unwrap());
        assert!(t.contains("+0.2500"));
    }

    #[test]
    fn mismatched_keys_are_listed() {
        let mut other = file("c", "agentic", 0.5, 0.5);
        other.1 = other.1.replace("Cov Pass@1", "Cov Pass@5");
        let e = render(&[file("a", "agentic", 0.5, 0.5), other], None).unwrap_err().to_string();
        assert!(e.contains("missing [Cov Pass@1]") && e.contains("unexpected [Cov Pass@5]"), "{e}");
    }
}
