//! The budgeted optimization loop.
//!
//! Rounds `1..=pretrain_rounds` evaluate uniformly random combinations. The
//! surrogate is then pretrained on the accumulated history, and every later
//! round proposes by maximizing `μ(c) + α·σ(c)` from the incumbent, evaluates,
//! updates the information matrix and finetunes the surrogate.
//!
//! All state needed to continue a run lives in [`Optimizer`] and can be
//! written to a checkpoint directory after any round. Every random draw is
//! keyed by `(root seed, stream, round)`, so a resumed run replays exactly
//! what the uninterrupted one would have done.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{ucb, BanditError, BanditState, RandomProjection};
use crate::embeddings::{combine_into, node_features, EmbeddingError, PromptCatalog, PromptCombination};
use crate::evaluators::{EvalContext, Evaluator, EvaluatorError};
use crate::rng::{mix_keys, stream_rng, stream_seed, Stream};
use crate::search::{
    argmax_first, coordinate_ascent, global_search, random_candidate, scan_coordinate, SearchError, Strategy,
    DEFAULT_GLOBAL_CAP,
};
use crate::surrogate::{SurrogateConfig, SurrogateError, SurrogateModel, TrainMode, TrainingSample};
use crate::workflow::{augment_adjacency, AugmentedAdjacency, WorkflowGraph};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("round {round}: {source}")]
    Evaluator {
        round: usize,
        #[source]
        source: EvaluatorError,
    },
    #[error("budget of {0} rounds already spent")]
    BudgetExhausted(usize),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DuplicatePolicy {
    #[default]
    Reevaluate,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub sweeps: usize,
    /// Visit agents in a seeded per-round shuffled order instead of ascending.
    pub shuffle_order: bool,
    /// Largest space `global` will enumerate.
    pub global_cap: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            strategy: Strategy::Coordinate,
            sweeps: 1,
            shuffle_order: false,
            global_cap: DEFAULT_GLOBAL_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub budget_total: usize,
    pub pretrain_rounds: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Coefficient on each rank-one information update.
    pub update_scale: f64,
    /// Sketch `Φ(c)` down to this many dimensions before the bandit sees it.
    pub projection_dim: Option<usize>,
    pub surrogate: SurrogateConfig,
    pub search: SearchConfig,
    pub duplicate_policy: DuplicatePolicy,
    /// Record real per-round wall time in logs. Off by default so logs are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            budget_total: 50,
            pretrain_rounds: 5,
            alpha: 0.2,
            lambda: 1.0,
            seed: 42,
            update_scale: 1.0,
            projection_dim: None,
            surrogate: SurrogateConfig::default(),
            search: SearchConfig::default(),
            duplicate_policy: DuplicatePolicy::Reevaluate,
            record_wall_time: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.budget_total == 0 {
            return bad("budget_total must be >= 1");
        }
        if self.pretrain_rounds >= self.budget_total {
            return bad("pretrain_rounds must be < budget_total");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be > 0");
        }
        if !(self.update_scale > 0.0 && self.update_scale.is_finite()) {
            return bad("update_scale must be > 0");
        }
        if self.projection_dim == Some(0) {
            return bad("projection_dim must be >= 1");
        }
        if self.search.sweeps == 0 {
            return bad("search.sweeps must be >= 1");
        }
        self.surrogate.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Optimize,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Optimize => "optimize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub phase: Phase,
    pub candidate: PromptCombination,
    /// Surrogate prediction at proposal time; absent when no surrogate is used.
    pub mu: Option<f64>,
    pub sigma: f64,
    pub ucb: Option<f64>,
    pub observed: f64,
    pub best_so_far: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_combination: Option<PromptCombination>,
    pub best_validation: f64,
    /// Round at which the incumbent last changed.
    pub stabilization_round: Option<usize>,
    pub evaluator_calls: usize,
    pub acquisition_evals: u64,
    pub logs: Vec<RoundLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Incumbent {
    combination: PromptCombination,
    score: f64,
    round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointState {
    version: u32,
    config: OptimizerConfig,
    logs: Vec<RoundLog>,
    incumbent: Option<Incumbent>,
    acquisition_evals: u64,
}

const CHECKPOINT_VERSION: u32 = 1;

type MeanFn<'a> = Box<dyn Fn(&PromptCombination) -> f64 + 'a>;

/// One optimization run, advanced a round at a time.
pub struct Optimizer<'a> {
    config: OptimizerConfig,
    run_id: String,
    catalog: &'a PromptCatalog,
    sizes: Vec<usize>,
    adjacency: AugmentedAdjacency,
    surrogate: SurrogateModel,
    bandit: BanditState,
    projection: Option<RandomProjection>,
    logs: Vec<RoundLog>,
    seen: HashSet<Vec<usize>>,
    incumbent: Option<Incumbent>,
    acquisition_evals: u64,
    search_time: Duration,
    pinned_mean: Option<MeanFn<'a>>,
}

impl<'a> Optimizer<'a> {
    pub fn new(config: OptimizerConfig, workflow: &WorkflowGraph, catalog: &'a PromptCatalog) -> Result<Self, OptimizerError> {
        config.validate()?;
        if workflow.n_agents() != catalog.n_agents() {
            return Err(OptimizerError::InvalidConfig(format!(
                "workflow has {} agents but the catalog covers {}",
                workflow.n_agents(),
                catalog.n_agents()
            )));
        }
        let mut scfg = config.surrogate.clone();
        scfg.seed = Some(scfg.seed.unwrap_or_else(|| stream_seed(config.seed, Stream::Init, 0)));
        let d = catalog.table().dim();
        let raw_dim = catalog.n_agents() * d;
        let projection = config
            .projection_dim
            .map(|k| RandomProjection::new(raw_dim, k, stream_seed(config.seed, Stream::Projection, 0)));
        let bandit_dim = config.projection_dim.unwrap_or(raw_dim);
        Ok(Optimizer {
            run_id: format!("seed-{}", config.seed),
            catalog,
            sizes: catalog.sizes(),
            adjacency: augment_adjacency(workflow),
            surrogate: SurrogateModel::new(scfg, d)?,
            bandit: BanditState::with_update_scale(bandit_dim, config.lambda, config.update_scale)?,
            projection,
            logs: Vec::new(),
            seen: HashSet::new(),
            incumbent: None,
            acquisition_evals: 0,
            search_time: Duration::ZERO,
            pinned_mean: None,
            config,
        })
    }

    /// Replace the surrogate mean with a fixed function and skip training.
    pub fn pin_mean(&mut self, f: impl Fn(&PromptCombination) -> f64 + 'a) {
        self.pinned_mean = Some(Box::new(f));
    }

    pub fn set_run_id(&mut self, id: impl Into<String>) {
        self.run_id = id.into();
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn logs(&self) -> &[RoundLog] {
        &self.logs
    }

    pub fn rounds_done(&self) -> usize {
        self.logs.len()
    }

    pub fn is_finished(&self) -> bool {
        self.logs.len() >= self.config.budget_total
    }

    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }

    pub fn surrogate(&self) -> &SurrogateModel {
        &self.surrogate
    }

    pub fn acquisition_evals(&self) -> u64 {
        self.acquisition_evals
    }

    /// Time spent maximizing the acquisition in this process.
    pub fn search_time(&self) -> Duration {
        self.search_time
    }

    pub fn incumbent(&self) -> Option<(&PromptCombination, f64)> {
        self.incumbent.as_ref().map(|i| (&i.combination, i.score))
    }

    /// Bandit feature of a combination (projected if configured).
    pub fn feature(&self, c: &PromptCombination) -> Result<Vec<f64>, OptimizerError> {
        let mut phi = Vec::new();
        combine_into(c, self.catalog.table(), &mut phi)?;
        Ok(match &self.projection {
            Some(p) => p.project(&phi),
            None => phi,
        })
    }

    pub fn sigma(&self, c: &PromptCombination) -> Result<f64, OptimizerError> {
        Ok(self.bandit.uncertainty(&self.feature(c)?)?)
    }

    pub fn mu(&self, c: &PromptCombination) -> Result<f64, OptimizerError> {
        if let Some(f) = &self.pinned_mean {
            return Ok(f(c));
        }
        let x = node_features(c, self.catalog.table())?;
        Ok(self.surrogate.predict(&x, &self.adjacency)?)
    }

    /// `μ(c) + α·σ(c)` under the current model.
    pub fn acquisition(&self, c: &PromptCombination) -> Result<f64, OptimizerError> {
        Ok(ucb(self.mu(c)?, self.sigma(c)?, self.config.alpha))
    }

    fn phase_of(&self, round: usize) -> Phase {
        if round <= self.config.pretrain_rounds {
            Phase::Pretrain
        } else {
            Phase::Optimize
        }
    }

    fn uses_surrogate(&self) -> bool {
        self.config.search.strategy != Strategy::Random && self.pinned_mean.is_none()
    }

    /// Acquisition closure for the search routines. Errors cannot occur for
    /// combinations inside the catalog domains, which is all search produces.
    fn acquisition_fn(&self) -> impl Fn(&PromptCombination) -> f64 + '_ {
        move |c: &PromptCombination| self.acquisition(c).expect("search stays inside catalog domains")
    }

    /// The candidate for an optimize-phase round.
    pub fn propose(&mut self, round: usize) -> Result<PromptCombination, OptimizerError> {
        let strategy = self.config.search.strategy;
        if strategy == Strategy::Random {
            return Ok(random_candidate(&self.sizes, &mut stream_rng(self.config.seed, Stream::Pretrain, round as u64)));
        }
        let start = match &self.incumbent {
            Some(i) => i.combination.clone(),
            None => random_candidate(&self.sizes, &mut stream_rng(self.config.seed, Stream::Pretrain, round as u64)),
        };
        let t0 = Instant::now();
        let report = {
            let acq = self.acquisition_fn();
            match strategy {
                Strategy::Global => global_search(&acq, &self.sizes, self.config.search.global_cap)?,
                _ => {
                    let order = self.config.search.shuffle_order.then(|| {
                        let mut o: Vec<usize> = (0..self.sizes.len()).collect();
                        o.shuffle(&mut stream_rng(self.config.seed, Stream::TieShuffle, round as u64));
                        o
                    });
                    coordinate_ascent(&start, &acq, &self.sizes, self.config.search.sweeps, order.as_deref())?
                }
            }
        };
        self.search_time += t0.elapsed();
        self.acquisition_evals += report.acquisition_evals;
        let mut c = report.best;
        if self.config.duplicate_policy == DuplicatePolicy::Skip && self.seen.contains(&c.0) {
            c = self.perturb(c, round);
        }
        Ok(c)
    }

    /// Move one uniformly chosen coordinate to its second-best acquisition value.
    fn perturb(&mut self, mut c: PromptCombination, round: usize) -> PromptCombination {
        let movable: Vec<usize> = (0..self.sizes.len()).filter(|&i| self.sizes[i] >= 2).collect();
        if movable.is_empty() {
            return c;
        }
        let mut rng = stream_rng(self.config.seed, Stream::TieShuffle, mix_keys(&[round as u64, 1]));
        let agent = movable[rng.random_range(0..movable.len())];
        let mut scores = {
            let acq = self.acquisition_fn();
            scan_coordinate(&c, agent, self.sizes[agent], &acq)
        };
        self.acquisition_evals += self.sizes[agent] as u64;
        scores[c.0[agent]] = f64::NEG_INFINITY;
        c.0[agent] = argmax_first(&scores);
        c
    }

    fn training_set(&self) -> Result<Vec<TrainingSample>, OptimizerError> {
        self.logs
            .iter()
            .map(|l| {
                let x = node_features(&l.candidate, self.catalog.table())?;
                Ok(TrainingSample::new(x, self.adjacency.clone(), l.observed)?)
            })
            .collect()
    }

    fn train_surrogate(&mut self) -> Result<(), OptimizerError> {
        let samples = self.training_set()?;
        let mode = if self.surrogate.train_calls() == 0 {
            TrainMode::Pretrain
        } else if self.config.surrogate.retrain_from_scratch {
            self.surrogate.reinitialize();
            TrainMode::Pretrain
        } else {
            TrainMode::Finetune
        };
        self.surrogate.train(&samples, mode)?;
        Ok(())
    }

    /// Run one round. Returns `BudgetExhausted` once all rounds are spent.
    pub fn step(&mut self, evaluator: &mut dyn Evaluator) -> Result<&RoundLog, OptimizerError> {
        if self.is_finished() {
            return Err(OptimizerError::BudgetExhausted(self.config.budget_total));
        }
        let started = Instant::now();
        let round = self.logs.len() + 1;
        let phase = self.phase_of(round);
        let candidate = match phase {
            Phase::Pretrain => {
                random_candidate(&self.sizes, &mut stream_rng(self.config.seed, Stream::Pretrain, round as u64))
            }
            Phase::Optimize => self.propose(round)?,
        };
        let phi = self.feature(&candidate)?;
        let sigma = self.bandit.uncertainty(&phi)?;
        let mu = if self.config.search.strategy != Strategy::Random || self.pinned_mean.is_some() {
            Some(self.mu(&candidate)?)
        } else {
            None
        };

        let ctx = EvalContext { run_id: &self.run_id, round };
        let observed = evaluator
            .evaluate(&candidate, &ctx)
            .and_then(|e| {
                if (0.0..=1.0).contains(&e.score) {
                    Ok(e.score)
                } else {
                    Err(EvaluatorError::ScoreOutOfRange(e.score))
                }
            })
            .map_err(|source| OptimizerError::Evaluator { round, source })?;

        self.bandit.update(&phi)?;
        if self.incumbent.as_ref().is_none_or(|i| observed > i.score) && observed > 0.0 {
            self.incumbent = Some(Incumbent {
                combination: candidate.clone(),
                score: observed,
                round,
            });
        }
        let best_so_far = self.incumbent.as_ref().map_or(0.0, |i| i.score);
        self.seen.insert(candidate.0.clone());
        self.logs.push(RoundLog {
            round,
            phase,
            candidate,
            mu,
            sigma,
            ucb: mu.map(|m| ucb(m, sigma, self.config.alpha)),
            observed,
            best_so_far,
            wall_time_s: 0.0,
        });
        if self.uses_surrogate() && round >= self.config.pretrain_rounds {
            self.train_surrogate()?;
        }
        let log = self.logs.last_mut().expect("just pushed");
        if self.config.record_wall_time {
            log.wall_time_s = started.elapsed().as_secs_f64();
        }
        Ok(log)
    }

    /// Run the remaining rounds.
    pub fn run(mut self, evaluator: &mut dyn Evaluator) -> Result<RunResult, OptimizerError> {
        while !self.is_finished() {
            self.step(evaluator)?;
        }
        Ok(self.result())
    }

    pub fn result(&self) -> RunResult {
        RunResult {
            best_combination: self.incumbent.as_ref().map(|i| i.combination.clone()),
            best_validation: self.incumbent.as_ref().map_or(0.0, |i| i.score),
            stabilization_round: self.incumbent.as_ref().map(|i| i.round),
            evaluator_calls: self.logs.len(),
            acquisition_evals: self.acquisition_evals,
            logs: self.logs.clone(),
        }
    }

    /// Write surrogate, bandit and loop state into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), OptimizerError> {
        let ck = |e: &dyn std::fmt::Display| OptimizerError::Checkpoint(e.to_string());
        fs::create_dir_all(dir).map_err(|e| ck(&e))?;
        self.surrogate
            .save(&dir.join("surrogate.bin"), &dir.join("surrogate.json"))?;
        self.bandit.save(&dir.join("bandit.bin"), &dir.join("bandit.json"))?;
        let state = CheckpointState {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            logs: self.logs.clone(),
            incumbent: self.incumbent.clone(),
            acquisition_evals: self.acquisition_evals,
        };
        let json = serde_json::to_string(&state).map_err(|e| ck(&e))?;
        let tmp = dir.join("state.json.tmp");
        fs::write(&tmp, json).map_err(|e| ck(&e))?;
        fs::rename(&tmp, dir.join("state.json")).map_err(|e| ck(&e))
    }

    /// Rebuild an optimizer from a checkpoint written by [`save_checkpoint`].
    ///
    /// [`save_checkpoint`]: Optimizer::save_checkpoint
    pub fn resume(
        config: OptimizerConfig,
        workflow: &WorkflowGraph,
        catalog: &'a PromptCatalog,
        dir: &Path,
    ) -> Result<Self, OptimizerError> {
        let ck = |e: &dyn std::fmt::Display| OptimizerError::Checkpoint(e.to_string());
        let mut opt = Self::new(config, workflow, catalog)?;
        let text = fs::read_to_string(dir.join("state.json")).map_err(|e| ck(&e))?;
        let state: CheckpointState = serde_json::from_str(&text).map_err(|e| ck(&e))?;
        if state.version != CHECKPOINT_VERSION {
            return Err(ck(&format!("unsupported checkpoint version {}", state.version)));
        }
        if state.config != opt.config {
            return Err(ck(&"checkpoint was written with a different optimizer config"));
        }
        let surrogate = SurrogateModel::load(&dir.join("surrogate.bin"), &dir.join("surrogate.json"))?;
        if surrogate.n_params() != opt.surrogate.n_params() || surrogate.in_dim() != opt.surrogate.in_dim() {
            return Err(ck(&"surrogate checkpoint shape does not match the catalog"));
        }
        let bandit = BanditState::load(&dir.join("bandit.bin"), &dir.join("bandit.json"))?;
        if bandit.dim() != opt.bandit.dim() || bandit.update_count() != state.logs.len() as u64 {
            return Err(ck(&"bandit checkpoint does not match the round log"));
        }
        for l in &state.logs {
            l.candidate.validate(catalog.domains())?;
        }
        opt.surrogate = surrogate;
        opt.bandit = bandit;
        opt.seen = state.logs.iter().map(|l| l.candidate.0.clone()).collect();
        opt.logs = state.logs;
        opt.incumbent = state.incumbent;
        opt.acquisition_evals = state.acquisition_evals;
        Ok(opt)
    }
}
