// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use covforge_core::artifact::{write_atomic, write_jsonl};
use covforge_core::corpus::{self, FixtureParams, SCRIPTS_FILE};
use covforge_core::dedup::{filter_corpus, DedupConfig, RougeVariant};
use covforge_core::evalharness::{aggregate, run_eval, EpisodeScore, EvalConfig, EvalMode};
use covforge_core::genbridge::{PromptMode, BUILTIN_SPECIALIST};
use covforge_core::simbridge::Budget;
use covforge_core::stages::{
    build_stage, export_sft, load_dataset, manifest_path_for, save_dataset, union_datasets, BuildOptions,
    StageDataset, StageModels,
};
use covforge_core::synth::MemoryPromptLog;
use serde::Serialize;

use crate::config::{LoadedConfig, RunKnobs};
use crate::manifest::{sidecar, RunRecorder};
use crate::{GlobalArgs, Outcome};

const RUN_MANIFEST: &str = "run_manifest.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn need_config(g: &GlobalArgs) -> Result<LoadedConfig> {
    let Some(p) = &g.config else {
        bail!("--config is required for this subcommand");
    };
    LoadedConfig::load(p)
}

fn outcome(truncated: bool) -> Outcome {
    if truncated {
        Outcome::Truncated
    } else {
        Outcome::Done
    }
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub repos: usize,
    #[arg(long, default_value_t = 5)]
    pub min_bins: usize,
    #[arg(long, default_value_t = 10)]
    pub max_bins: usize,
    /// Chance that a student draft breaks compilation.
    #[arg(long, default_value_t = 0.3)]
    pub hazard: f64,
    /// Per-repo Cov Pass threshold written to the corpus metadata.
    #[arg(long, default_value_t = corpus::DEFAULT_PASS_THRESHOLD)]
    pub threshold: f64,
}

const FIXTURE_JOB: &str = r#"# Scripted teacher/student over the synthetic corpus.
[corpus]
path = "corpus"
scripts = "scripts.toml"

[models.teacher]
id = "teacher"
backend = "scripted"
model = "teacher"

[models.student]
id = "student"
backend = "scripted"
model = "student"

[budget]
simulator_calls = 100000

[run]
seed = 1
workers = 4
"#;

pub fn fixture(g: &GlobalArgs, a: FixtureArgs) -> Result<Outcome> {
    if a.repos == 0 {
        bail!("--repos must be at least 1");
    }
    if a.min_bins == 0 || a.min_bins > a.max_bins {
        bail!("need 1 <= --min-bins <= --max-bins");
    }
    if !(0.0..=1.0).contains(&a.hazard) {
        bail!("--hazard must lie in [0, 1]");
    }
    let seed = g.seed.unwrap_or(0);
    let params = FixtureParams {
        repos: a.repos,
        min_bins: a.min_bins,
        max_bins: a.max_bins,
        hazard_density: a.hazard,
        pass_threshold: a.threshold,
    };
    let mut rec = RunRecorder::start();
    rec.seed = Some(seed);
    rec.config_input("fixture", format!("{params:?}").as_bytes());
    let repos = corpus::synthetic_corpus(&params, seed)?;
    let cdir = a.out.join("corpus");
    if cdir.exists() {
        bail!("{} already exists; choose an empty --out", cdir.display());
    }
    corpus::save_corpus(&cdir, &repos)?;
    let scripts = toml::to_string(&corpus::fixture_scripts(a.hazard))?;
    let spath = a.out.join(SCRIPTS_FILE);
    write_atomic(&spath, scripts.as_bytes())?;
    let jpath = a.out.join("job.toml");
    write_atomic(&jpath, FIXTURE_JOB.as_bytes())?;
    for r in &repos {
        for f in r.files.keys() {
            rec.output(cdir.join(&r.id).join(f));
        }
    }
    rec.output(cdir.join(corpus::META_FILE));
    rec.output(spath);
    rec.output(jpath);
    rec.finish(&a.out.join(RUN_MANIFEST))?;
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub stage: u32,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(g: &GlobalArgs, a: SynthArgs) -> Result<Outcome> {
    let cfg = need_config(g)?;
    let knobs = RunKnobs::resolve(Some(&cfg.job), g.seed, g.workers, g.budget)?;
    let spec = cfg.stage_spec(a.stage)?;
    let scripts = cfg.scripts()?;
    let teacher = cfg.model("teacher", &scripts)?;
    let student = match cfg.registry()? {
        Some(reg) => {
            let h = reg.student_for(a.stage)?.clone();
            covforge_core::genbridge::Model::connect(h, &scripts)?
        }
        None => cfg.model("student", &scripts)?,
    };
    let repos = cfg.corpus()?;
    let budget = Arc::new(Budget::new(knobs.budget)?);
    let simulator = cfg.job.simulator.build(budget.clone())?;
    let log = Arc::new(MemoryPromptLog::new());
    let opts = BuildOptions {
        simulator,
        seed: knobs.seed,
        workers: knobs.workers,
        prompt_sink: Some(log.clone()),
    };
    let mut rec = RunRecorder::start();
    rec.seed = Some(knobs.seed);
    rec.config_input("config", &cfg.bytes);
    rec.config_input("stage", &a.stage.to_le_bytes());
    let build = build_stage(&repos, &spec, &StageModels { teacher, student }, &opts)?;
    drop(opts);

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ds_path = a.out.join("dataset.json");
    save_dataset(&build.dataset, &ds_path)?;
    let sft_path = a.out.join("sft.jsonl");
    let sft_manifest = export_sft(&build.dataset, &sft_path)?;
    let tr_path = a.out.join("transitions.jsonl");
    write_jsonl(&tr_path, &build.transitions)?;
    let prompts = Arc::try_unwrap(log).map_err(|_| anyhow::anyhow!("prompt log still shared"))?;
    let pr_path = a.out.join("prompts.jsonl");
    write_jsonl(&pr_path, prompts.into_sorted())?;
    for p in [&ds_path, &sft_path, &sft_manifest, &tr_path, &pr_path] {
        rec.output(p.clone());
    }
    let truncated = build.dataset.manifest.truncated;
    rec.truncated = truncated;
    rec.budget = Some(budget.snapshot());
    rec.finish(&a.out.join(RUN_MANIFEST))?;
    Ok(outcome(truncated))
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// `dataset.json` written by `synth` or `union`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn export(_g: &GlobalArgs, a: ExportArgs) -> Result<Outcome> {
    let mut rec = RunRecorder::start();
    let bytes = std::fs::read(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    rec.config_input("dataset", &bytes);
    let ds = load_dataset(&a.dataset)?;
    let m = export_sft(&ds, &a.out)?;
    rec.output(a.out.clone());
    rec.output(m);
    rec.truncated = ds.manifest.truncated;
    rec.finish(&sidecar(&a.out))?;
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
pub struct UnionArgs {
    /// Dataset files, repeated; order is preserved in the output.
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn union(_g: &GlobalArgs, a: UnionArgs) -> Result<Outcome> {
    let mut rec = RunRecorder::start();
    let mut sets: Vec<StageDataset> = Vec::new();
    for p in &a.datasets {
        rec.config_input("dataset", &std::fs::read(p).with_context(|| format!("reading {}", p.display()))?);
        sets.push(load_dataset(p)?);
    }
    let u = union_datasets(&sets)?;
    std::fs::create_dir_all(&a.out)?;
    let ds_path = a.out.join("dataset.json");
    save_dataset(&u, &ds_path)?;
    let sft = a.out.join("sft.jsonl");
    let m = export_sft(&u, &sft)?;
    debug_assert_eq!(m, manifest_path_for(&sft));
    rec.output(ds_path);
    rec.output(sft);
    rec.output(m);
    rec.finish(&a.out.join(RUN_MANIFEST))?;
    Ok(Outcome::Done)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    F1,
    Recall,
}

#[derive(Args, Debug)]
pub struct DedupArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "f1")]
    pub variant: VariantArg,
    /// Score every pair, skipping the length bound.
    #[arg(long)]
    pub no_prefilter: bool,
    /// Similarity report (JSON).
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the cleaned corpus here.
    #[arg(long)]
    pub clean_out: Option<PathBuf>,
}

pub fn dedup(g: &GlobalArgs, a: DedupArgs) -> Result<Outcome> {
    let mut rec = RunRecorder::start();
    let corpus = corpus::load_corpus(&a.corpus)?;
    let bench = corpus::load_corpus(&a.benchmark)?;
    let cfg = DedupConfig {
        threshold: a.threshold,
        variant: match a.variant {
            VariantArg::F1 => RougeVariant::F1,
            VariantArg::Recall => RougeVariant::Recall,
        },
        length_prefilter: !a.no_prefilter,
    };
    rec.config_input("dedup", serde_json::to_string(&cfg)?.as_bytes());
    let workers = g.workers.unwrap_or(1).max(1);
    let pool = rayon_pool(workers)?;
    let (clean, report) = pool.install(|| filter_corpus(&corpus, &bench, &cfg))?;
    write_json(&a.report, &report)?;
    rec.output(a.report.clone());
    if let Some(dir) = &a.clean_out {
        if dir.exists() {
            bail!("{} already exists", dir.display());
        }
        corpus::save_corpus(dir, &clean)?;
        for r in &clean {
            for f in r.files.keys() {
                rec.output(dir.join(&r.id).join(f));
            }
        }
        rec.output(dir.join(corpus::META_FILE));
    }
    eprintln!(
        "kept {} of {} repos; removed {}",
        clean.len(),
        corpus.len(),
        report.removed_repo_ids.len()
    );
    rec.finish(&sidecar(&a.report))?;
    Ok(Outcome::Done)
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ModeArg {
    Direct,
    Agentic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PromptArg {
    Memoryless,
    Vanilla,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreArg {
    Best,
    Final,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model name from [models], or `stage:<k>` from the stage registry.
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Rounds per episode; defaults to 3 (agentic) or 1 (direct).
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "memoryless")]
    pub prompt: PromptArg,
    /// Which round scores an episode.
    #[arg(long, value_enum, default_value = "best")]
    pub score: ScoreArg,
    /// Append the built-in specialist rules to every prompt.
    #[arg(long)]
    pub specialist: bool,
    /// Benchmark corpus; defaults to the config's [corpus] path.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a str,
    mode: EvalMode,
    prompt_mode: PromptMode,
    score: EpisodeScore,
    rounds: usize,
    samples: usize,
    k: usize,
    metrics: std::collections::BTreeMap<String, f64>,
    table: &'a covforge_core::evalharness::MetricsTable,
}

pub fn eval(g: &GlobalArgs, a: EvalArgs) -> Result<Outcome> {
    let cfg = need_config(g)?;
    let knobs = RunKnobs::resolve(Some(&cfg.job), g.seed, g.workers, g.budget)?;
    let mode = match a.mode {
        ModeArg::Direct => EvalMode::Direct,
        ModeArg::Agentic => EvalMode::Agentic,
    };
    let rounds = a.rounds.unwrap_or(if mode == EvalMode::Direct { 1 } else { 3 });
    let specialist = if a.specialist {
        Some(covforge_core::genbridge::resolve_asset(BUILTIN_SPECIALIST)?)
    } else {
        None
    };
    let config = EvalConfig {
        mode,
        rounds,
        samples: a.samples,
        prompt_mode: match a.prompt {
            PromptArg::Memoryless => PromptMode::Memoryless,
            PromptArg::Vanilla => PromptMode::Vanilla,
        },
        score: match a.score {
            ScoreArg::Best => EpisodeScore::Best,
            ScoreArg::Final => EpisodeScore::Final,
        },
        specialist_prompt: specialist,
    };
    config.validate()?;
    if a.k == 0 || a.k > a.samples {
        bail!("--k must lie in [1, --samples]");
    }
    let scripts = cfg.scripts()?;
    let model = cfg.model(&a.model, &scripts)?;
    let repos = match &a.corpus {
        Some(p) => corpus::load_corpus(p)?,
        None => cfg.corpus()?,
    };
    let budget = Arc::new(Budget::new(knobs.budget)?);
    let simulator = cfg.job.simulator.build(budget.clone())?;
    let mut rec = RunRecorder::start();
    rec.seed = Some(knobs.seed);
    rec.config_input("config", &cfg.bytes);
    rec.config_input("eval", serde_json::to_string(&config)?.as_bytes());
    rec.config_input("model", a.model.as_bytes());
    rec.config_input("k", &a.k.to_le_bytes());

    let episodes = run_eval(&repos, &model, &simulator, &config, knobs.seed, knobs.workers)?;
    let table = aggregate(&episodes, &repos, a.k)?;
    std::fs::create_dir_all(&a.out)?;
    let out = EvalOutput {
        model: model.id(),
        mode,
        prompt_mode: config.prompt_mode,
        score: config.score,
        rounds,
        samples: a.samples,
        k: a.k,
        metrics: table.rows().into_iter().collect(),
        table: &table,
    };
    let mj = a.out.join("metrics.json");
    write_json(&mj, &out)?;
    let mt = a.out.join("metrics.txt");
    write_atomic(&mt, table.render().as_bytes())?;
    let ep = a.out.join("episodes.jsonl");
    write_jsonl(&ep, &episodes)?;
    for p in [mj, mt, ep] {
        rec.output(p);
    }
    print!("{}", table.render());
    let truncated = table.truncated_episodes > 0;
    rec.truncated = truncated;
    rec.budget = Some(budget.snapshot());
    rec.finish(&a.out.join(RUN_MANIFEST))?;
    Ok(outcome(truncated))
}
