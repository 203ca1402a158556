//! Config-driven runs: loading a run config, producing artifacts, resuming
//! from checkpoints and running strategy comparisons.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embeddings::{domains_from_sizes, load_embeddings, synthetic_embeddings, EmbeddingFormat, PromptCatalog};
use crate::evaluators::{Evaluator, EvaluatorError, Landscape, LandscapeSpec, RemoteEvaluator, RemoteEvaluatorSpec};
use crate::optimizer::{Optimizer, OptimizerConfig, OptimizerError, RunResult};
use crate::report::{format_float, render_chart, write_round_log};
use crate::search::{space_size, Strategy};
use crate::workflow::{WorkflowGraph, WorkflowSpec};

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad or inconsistent configuration; nothing has been written.
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Evaluator(String),
    #[error("{0}")]
    Optimizer(OptimizerError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<OptimizerError> for RunError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Evaluator { .. } => RunError::Evaluator(e.to_string()),
            OptimizerError::InvalidConfig(m) => RunError::Config(m),
            other => RunError::Optimizer(other),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkflowSource {
    Path(PathBuf),
    Inline(WorkflowSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingSource {
    Synthetic {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: EmbeddingFormat,
        /// Index CSV for the raw format.
        #[serde(default)]
        index: Option<PathBuf>,
    },
}

fn default_dim() -> usize {
    32
}

fn default_format() -> EmbeddingFormat {
    EmbeddingFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub source: EmbeddingSource,
    /// Same domain size for every agent, unless `domain_sizes` is given.
    #[serde(default = "default_prompts")]
    pub prompts_per_agent: usize,
    #[serde(default)]
    pub domain_sizes: Option<Vec<usize>>,
    /// Scale every prompt vector to unit norm before the optimizer sees it.
    #[serde(default)]
    pub normalize_embeddings: bool,
}

fn default_prompts() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Landscape(LandscapeSpec),
    Remote(RemoteEvaluatorSpec),
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig::Landscape(LandscapeSpec::default())
    }
}

/// One JSON run document. Absent fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workflow: WorkflowSource,
    pub embeddings: EmbeddingsConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Identifier sent to remote evaluators.
    #[serde(default)]
    pub run_id: Option<String>,
    /// Also write `convergence.svg` next to the round log.
    #[serde(default)]
    pub chart: bool,
}

/// Parse a config, reporting the JSON path, line and column of the first error.
pub fn parse_config(text: &str) -> Result<RunConfig, RunError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        RunError::Config(format!(
            "field '{path}' (line {}, column {}): {inner}",
            inner.line(),
            inner.column()
        ))
    })
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a run needs besides the optimizer state.
pub struct Prepared {
    pub config: RunConfig,
    pub workflow: WorkflowGraph,
    /// What the optimizer sees (normalized if requested).
    pub catalog: PromptCatalog,
    /// Raw table the synthetic landscape is defined on.
    pub landscape_table: crate::embeddings::EmbeddingTable,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Prepared {
    /// Load workflow and embeddings and validate the whole config.
    /// Relative paths are resolved against `base_dir`.
    pub fn new(config: RunConfig, base_dir: &Path) -> Result<Self, RunError> {
        let cfg_err = |e: &dyn std::fmt::Display| RunError::Config(e.to_string());
        let workflow = match &config.workflow {
            WorkflowSource::Path(p) => WorkflowGraph::from_json_file(&resolve(base_dir, p)),
            WorkflowSource::Inline(spec) => spec.build(),
        }
        .map_err(|e| RunError::Config(format!("workflow: {e}")))?;
        let n = workflow.n_agents();
        let sizes = match &config.embeddings.domain_sizes {
            Some(s) if s.len() != n => {
                return Err(RunError::Config(format!(
                    "embeddings.domain_sizes has {} entries but the workflow has {n} agents",
                    s.len()
                )))
            }
            Some(s) => s.clone(),
            None => vec![config.embeddings.prompts_per_agent; n],
        };
        if sizes.contains(&0) {
            return Err(RunError::Config("every prompt domain must be non-empty".into()));
        }
        let domains = domains_from_sizes(&sizes);
        let raw = match &config.embeddings.source {
            EmbeddingSource::Synthetic { dim, seed } => {
                if *dim == 0 {
                    return Err(RunError::Config("embeddings.source.synthetic.dim must be >= 1".into()));
                }
                synthetic_embeddings(&domains, *dim, *seed)
            }
            EmbeddingSource::File { path, format, index } => {
                let index = index.as_ref().map(|i| resolve(base_dir, i));
                load_embeddings(&resolve(base_dir, path), *format, index.as_deref(), &domains)
                    .map_err(|e| RunError::Config(format!("embeddings: {e}")))?
            }
        };
        let table = if config.embeddings.normalize_embeddings {
            raw.normalized()
        } else {
            raw.clone()
        };
        config.optimizer.validate().map_err(|e| cfg_err(&e))?;
        match &config.evaluator {
            EvaluatorConfig::Landscape(s) => s.validate().map_err(|e| cfg_err(&e))?,
            EvaluatorConfig::Remote(s) => s.validate().map_err(|e| cfg_err(&e))?,
        }
        Ok(Prepared {
            config,
            workflow,
            catalog: PromptCatalog::new(table),
            landscape_table: raw,
        })
    }

    pub fn landscape(&self, spec: &LandscapeSpec) -> Result<Landscape, RunError> {
        Landscape::new(spec.clone(), &self.workflow, &self.landscape_table).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn evaluator(&self) -> Result<Box<dyn Evaluator>, RunError> {
        Ok(match &self.config.evaluator {
            EvaluatorConfig::Landscape(spec) => Box::new(self.landscape(spec)?),
            EvaluatorConfig::Remote(spec) => {
                Box::new(RemoteEvaluator::new(spec.clone()).map_err(|e: EvaluatorError| RunError::Config(e.to_string()))?)
            }
        })
    }

    pub fn run_id(&self) -> String {
        self.config
            .run_id
            .clone()
            .unwrap_or_else(|| format!("maspob-seed-{}", self.config.optimizer.seed))
    }
}

/// Read, parse and prepare a config file. Returns the raw bytes too, for hashing.
pub fn load_config_file(path: &Path) -> Result<(Vec<u8>, Prepared), RunError> {
    let bytes = fs::read(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| RunError::Config(format!("config is not UTF-8: {e}")))?;
    let config = parse_config(text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok((bytes, Prepared::new(config, base)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub round_log: PathBuf,
    pub result: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub config_copy: PathBuf,
    pub chart: Option<PathBuf>,
}

impl Artifacts {
    pub fn in_dir(out: &Path, chart: bool) -> Self {
        Artifacts {
            round_log: out.join("rounds.csv"),
            result: out.join("result.json"),
            checkpoint_dir: out.join("checkpoint"),
            config_copy: out.join("config.json"),
            chart: chart.then(|| out.join("convergence.svg")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    #[serde(default)]
    pub resumed_at: Vec<String>,
    pub status: String,
    pub rounds_completed: usize,
    pub artifacts: Artifacts,
    pub version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    fn save(&self, path: &Path) -> Result<(), RunError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| io_err(path, e))?;
        fs::write(path, json + "\n").map_err(|e| io_err(path, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop cleanly once this many rounds are done (checkpoint kept).
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub enum RunOutcome {
    Completed(RunResult),
    Stopped { rounds: usize },
}

/// `maspob run`: drive one run to completion, writing artifacts under `out`.
///
/// The round log and checkpoint are rewritten after every round, so an
/// interrupted run can continue with `resume` and produce the same log an
/// uninterrupted run would have.
pub fn run_to_dir(config_path: &Path, out: &Path, opts: RunOptions) -> Result<RunOutcome, RunError> {
    let (bytes, prepared) = load_config_file(config_path)?;
    let hash = config_hash(&bytes);
    let arts = Artifacts::in_dir(out, prepared.config.chart);
    let manifest_path = out.join("manifest.json");

    let (mut manifest, mut opt) = if opts.resume {
        let mut m = RunManifest::load(&manifest_path).map_err(|e| RunError::Config(format!("cannot resume: {e}")))?;
        if m.config_hash != hash {
            return Err(RunError::Config(format!(
                "config hash {hash} does not match the checkpointed run ({})",
                m.config_hash
            )));
        }
        let opt = Optimizer::resume(
            prepared.config.optimizer.clone(),
            &prepared.workflow,
            &prepared.catalog,
            &arts.checkpoint_dir,
        )
        .map_err(|e| RunError::Config(format!("cannot resume: {e}")))?;
        m.resumed_at.push(now());
        m.status = "running".into();
        (m, opt)
    } else {
        let opt = Optimizer::new(prepared.config.optimizer.clone(), &prepared.workflow, &prepared.catalog)?;
        let m = RunManifest {
            config_hash: hash,
            seed: prepared.config.optimizer.seed,
            started_at: now(),
            finished_at: None,
            resumed_at: Vec::new(),
            status: "running".into(),
            rounds_completed: 0,
            artifacts: arts.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        (m, opt)
    };
    let mut evaluator = prepared.evaluator()?;
    opt.set_run_id(prepared.run_id());

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    if !opts.resume {
        if arts.checkpoint_dir.exists() {
            fs::remove_dir_all(&arts.checkpoint_dir).map_err(|e| io_err(&arts.checkpoint_dir, e))?;
        }
        fs::write(&arts.config_copy, &bytes).map_err(|e| io_err(&arts.config_copy, e))?;
    }
    manifest.save(&manifest_path)?;

    while !opt.is_finished() {
        if opts.stop_after.is_some_and(|n| opt.rounds_done() >= n) {
            manifest.status = "stopped".into();
            manifest.rounds_completed = opt.rounds_done();
            manifest.save(&manifest_path)?;
            return Ok(RunOutcome::Stopped {
                rounds: opt.rounds_done(),
            });
        }
        if let Err(e) = opt.step(evaluator.as_mut()) {
            manifest.status = "failed".into();
            manifest.rounds_completed = opt.rounds_done();
            manifest.save(&manifest_path)?;
            return Err(e.into());
        }
        write_round_log(&arts.round_log, opt.logs()).map_err(|e| RunError::Io(e.to_string()))?;
        opt.save_checkpoint(&arts.checkpoint_dir)?;
    }

    let result = opt.result();
    let json = serde_json::to_string_pretty(&result).map_err(|e| io_err(&arts.result, e))?;
    fs::write(&arts.result, json + "\n").map_err(|e| io_err(&arts.result, e))?;
    if let Some(chart) = &arts.chart {
        fs::write(chart, render_chart(&result.logs)).map_err(|e| io_err(chart, e))?;
    }
    manifest.status = "completed".into();
    manifest.finished_at = Some(now());
    manifest.rounds_completed = result.logs.len();
    manifest.save(&manifest_path)?;
    Ok(RunOutcome::Completed(result))
}

/// One (seed, strategy) cell of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub best_true_score: f64,
    pub best_validation: f64,
    pub oracle_score: Option<f64>,
    pub regret: Option<f64>,
    pub evaluator_calls: usize,
    pub acquisition_evals: u64,
    pub stabilization_round: Option<usize>,
    pub search_time_s: f64,
    pub wall_time_s: f64,
    /// `σ` of the proposal at the first optimize round and at the last round.
    pub sigma_first: Option<f64>,
    pub sigma_last: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub strategies: Vec<Strategy>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl CompareReport {
    pub fn rows_for(&self, s: Strategy) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(move |r| r.strategy == s)
    }

    pub fn mean_of(&self, s: Strategy, f: impl Fn(&CompareRow) -> f64) -> f64 {
        let xs: Vec<f64> = self.rows_for(s).map(f).collect();
        mean_sd(&xs).0
    }

    /// Deterministic per-seed rows plus one `mean±sd` row per strategy.
    pub fn results_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "seed",
            "strategy",
            "best_true_score",
            "best_validation",
            "oracle_score",
            "regret",
            "evaluator_calls",
            "acquisition_evals",
            "stabilization_round",
        ])
        .expect("in-memory write");
        let opt = |x: Option<f64>| x.map(format_float).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.strategy.to_string(),
                format_float(r.best_true_score),
                format_float(r.best_validation),
                opt(r.oracle_score),
                opt(r.regret),
                r.evaluator_calls.to_string(),
                r.acquisition_evals.to_string(),
                r.stabilization_round.map(|x| x.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        for &s in &self.strategies {
            let agg = |f: &dyn Fn(&CompareRow) -> Option<f64>| {
                let xs: Vec<f64> = self.rows_for(s).filter_map(f).collect();
                if xs.is_empty() {
                    return String::new();
                }
                let (m, sd) = mean_sd(&xs);
                format!("{}±{}", format_float(m), format_float(sd))
            };
            w.write_record([
                "mean±sd".to_string(),
                s.to_string(),
                agg(&|r| Some(r.best_true_score)),
                agg(&|r| Some(r.best_validation)),
                agg(&|r| r.oracle_score),
                agg(&|r| r.regret),
                agg(&|r| Some(r.evaluator_calls as f64)),
                agg(&|r| Some(r.acquisition_evals as f64)),
                agg(&|r| r.stabilization_round.map(|x| x as f64)),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Hardware-dependent timings, kept apart so `results_csv` stays byte-stable.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("seed,strategy,search_time_s,wall_time_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.seed,
                r.strategy,
                format_float(r.search_time_s),
                format_float(r.wall_time_s)
            ));
        }
        out
    }
}

/// Run every strategy on `seeds` instances of the configured landscape family.
///
/// Seed `k` offsets the optimizer seed, the landscape seed and (for synthetic
/// embeddings) the embedding seed by `k`. Rows are ordered by seed, then by
/// strategy in the order given.
pub fn compare(config: &RunConfig, base_dir: &Path, strategies: &[Strategy], seeds: u64) -> Result<CompareReport, RunError> {
    let EvaluatorConfig::Landscape(base_spec) = &config.evaluator else {
        return Err(RunError::Config("compare needs a synthetic landscape evaluator".into()));
    };
    if strategies.is_empty() || seeds == 0 {
        return Err(RunError::Config("compare needs at least one strategy and one seed".into()));
    }
    let mut rows = Vec::new();
    for k in 0..seeds {
        let mut cfg = config.clone();
        cfg.optimizer.seed = config.optimizer.seed.wrapping_add(k);
        if let EmbeddingSource::Synthetic { seed, .. } = &mut cfg.embeddings.source {
            *seed = seed.wrapping_add(k);
        }
        let spec = LandscapeSpec {
            seed: base_spec.seed.wrapping_add(k),
            ..base_spec.clone()
        };
        cfg.evaluator = EvaluatorConfig::Landscape(spec.clone());
        let prepared = Prepared::new(cfg, base_dir)?;
        let truth = prepared.landscape(&spec)?;
        let cap = prepared.config.optimizer.search.global_cap;
        let oracle = match space_size(truth.sizes()) {
            Some(n) if n <= cap as u128 => Some(truth.oracle_argmax(cap).map_err(|e| RunError::Config(e.to_string()))?.1),
            _ => None,
        };
        for &strategy in strategies {
            if strategy == Strategy::Global && space_size(truth.sizes()).is_none_or(|n| n > cap as u128) {
                return Err(RunError::Config(format!(
                    "global search over {:?} exceeds the enumeration cap of {cap}",
                    truth.sizes()
                )));
            }
            let mut ocfg = prepared.config.optimizer.clone();
            ocfg.search.strategy = strategy;
            let mut ev = truth.clone();
            let t0 = Instant::now();
            let opt = Optimizer::new(ocfg, &prepared.workflow, &prepared.catalog)?;
            let (result, search_time) = run_collecting(opt, &mut ev)?;
            let wall = t0.elapsed();
            let best_true = match &result.best_combination {
                Some(c) => truth.true_score(c).map_err(|e| RunError::Config(e.to_string()))?,
                None => 0.0,
            };
            let p = prepared.config.optimizer.pretrain_rounds;
            rows.push(CompareRow {
                seed: k,
                strategy,
                best_true_score: best_true,
                best_validation: result.best_validation,
                oracle_score: oracle,
                regret: oracle.map(|o| o - best_true),
                evaluator_calls: result.evaluator_calls,
                acquisition_evals: result.acquisition_evals,
                stabilization_round: result.stabilization_round,
                search_time_s: search_time.as_secs_f64(),
                wall_time_s: wall.as_secs_f64(),
                sigma_first: result.logs.get(p).map(|l| l.sigma),
                sigma_last: result.logs.last().filter(|l| l.round > p).map(|l| l.sigma),
            });
        }
    }
    Ok(CompareReport {
        rows,
        strategies: strategies.to_vec(),
    })
}

fn run_collecting(mut opt: Optimizer<'_>, ev: &mut dyn Evaluator) -> Result<(RunResult, Duration), RunError> {
    while !opt.is_finished() {
        opt.step(ev)?;
    }
    Ok((opt.result(), opt.search_time()))
}

/// `maspob compare`: write `compare.csv`, `timing.csv` and `summary.json` to `out`.
pub fn compare_to_dir(config_path: &Path, strategies: &[Strategy], seeds: u64, out: &Path) -> Result<CompareReport, RunError> {
    let (_, prepared) = load_config_file(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let report = compare(&prepared.config, base, strategies, seeds)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    };
    write("compare.csv", report.results_csv())?;
    write("timing.csv", report.timing_csv())?;
    write(
        "summary.json",
        serde_json::to_string_pretty(&summary(&report)).map_err(|e| io_err(out, e))? + "\n",
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_best_true_score: f64,
    pub sd_best_true_score: f64,
    pub mean_regret: Option<f64>,
    pub mean_acquisition_evals: f64,
    pub total_search_time_s: f64,
    pub total_wall_time_s: f64,
}

pub fn summary(report: &CompareReport) -> Vec<StrategySummary> {
    report
        .strategies
        .iter()
        .map(|&s| {
            let rows: Vec<&CompareRow> = report.rows_for(s).collect();
            let (m, sd) = mean_sd(&rows.iter().map(|r| r.best_true_score).collect::<Vec<_>>());
            let regrets: Vec<f64> = rows.iter().filter_map(|r| r.regret).collect();
            StrategySummary {
                strategy: s,
                runs: rows.len(),
                mean_best_true_score: m,
                sd_best_true_score: sd,
                mean_regret: (!regrets.is_empty()).then(|| mean_sd(&regrets).0),
                mean_acquisition_evals: report.mean_of(s, |r| r.acquisition_evals as f64),
                total_search_time_s: rows.iter().map(|r| r.search_time_s).sum(),
                total_wall_time_s: rows.iter().map(|r| r.wall_time_s).sum(),
            }
        })
        .collect()
}
