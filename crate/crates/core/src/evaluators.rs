//! Scoring backends: seeded synthetic landscapes with exact oracles, and a
//! JSON-over-HTTP client for external evaluation services.

use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{EmbeddingTable, PromptCombination};
use crate::matrix::{dot, Matrix};
use crate::rng::{mix_keys, stream_rng, Stream};
use crate::search::{argmax_first, global_search, SearchError};
use crate::workflow::WorkflowGraph;

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("evaluator timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("evaluator failure: {0}")]
    EvaluatorFailure(String),
    #[error("evaluator returned score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid evaluator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Per-call context the optimizer hands to the evaluator.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub run_id: &'a str,
    /// 1-based round number.
    pub round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub n_instances: Option<u64>,
}

/// A black-box scorer `s(c)`. Implementations must return scores in `[0, 1]`.
pub trait Evaluator {
    fn evaluate(&mut self, c: &PromptCombination, ctx: &EvalContext<'_>) -> Result<Evaluation, EvaluatorError>;
}

/// Always returns the same score. Useful as a null baseline.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEvaluator(pub f64);

impl Evaluator for ConstantEvaluator {
    fn evaluate(&mut self, _c: &PromptCombination, _ctx: &EvalContext<'_>) -> Result<Evaluation, EvaluatorError> {
        checked_score(self.0).map(|score| Evaluation { score, n_instances: None })
    }
}

fn checked_score(x: f64) -> Result<f64, EvaluatorError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(EvaluatorError::ScoreOutOfRange(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LandscapeFamily {
    Separable,
    #[default]
    Coupled,
}

pub const DEFAULT_COUPLING_STRENGTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSpec {
    pub family: LandscapeFamily,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Weight of the pairwise edge terms; ignored by the separable family.
    pub coupling_strength: f64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            family: LandscapeFamily::Coupled,
            seed: 0,
            noise_sigma: 0.0,
            coupling_strength: DEFAULT_COUPLING_STRENGTH,
        }
    }
}

impl LandscapeSpec {
    pub fn validate(&self) -> Result<(), EvaluatorError> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.5) {
            return Err(EvaluatorError::InvalidSpec("noise_sigma must be in [0, 0.5)".into()));
        }
        if !self.coupling_strength.is_finite() {
            return Err(EvaluatorError::InvalidSpec("coupling_strength must be finite".into()));
        }
        Ok(())
    }
}

/// Seeded synthetic objective over prompt combinations.
///
/// The noiseless logit is `(1/N) Σ_i w_iᵀΦ(p_i)`, plus
/// `κ Σ_{(i,j)∈ℰ} Φ(p_i)ᵀ W_ij Φ(p_j)` for the coupled family. Parameters are
/// i.i.d. normal with standard deviation `1/√d`. Unary weights come from the
/// same stream in both families, so a coupled landscape with `κ = 0` scores
/// every combination exactly like the separable one with the same seed.
#[derive(Debug, Clone)]
pub struct Landscape {
    spec: LandscapeSpec,
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    /// `unary[i][p] = w_iᵀΦ(p)`.
    unary: Vec<Vec<f64>>,
    /// `pair[e][p_i * |𝒫_j| + p_j] = Φ(p_i)ᵀ W_e Φ(p_j)` for edge `e = (i, j)`.
    pair: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

fn gaussian_vec(root: u64, key: u64, len: usize, std: f64) -> Vec<f64> {
    let mut rng = stream_rng(root, Stream::Landscape, key);
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

impl Landscape {
    pub fn new(spec: LandscapeSpec, workflow: &WorkflowGraph, table: &EmbeddingTable) -> Result<Self, EvaluatorError> {
        spec.validate()?;
        let n = workflow.n_agents();
        if table.n_agents() != n {
            return Err(EvaluatorError::InvalidSpec(format!(
                "embedding table covers {} agents, workflow has {n}",
                table.n_agents()
            )));
        }
        let d = table.dim();
        let std = 1.0 / (d as f64).sqrt();
        let sizes = table.domain_sizes();
        let unary = (0..n)
            .map(|i| {
                let w = gaussian_vec(spec.seed, mix_keys(&[0, i as u64]), d, std);
                (0..sizes[i])
                    .map(|p| dot(&w, table.vector(i, p).expect("prompt within table")))
                    .collect()
            })
            .collect();
        let edges: Vec<(usize, usize)> = workflow.edges().iter().map(|&(a, b)| (a.0, b.0)).collect();
        let pair = match spec.family {
            LandscapeFamily::Separable => Vec::new(),
            LandscapeFamily::Coupled => edges
                .iter()
                .map(|&(i, j)| {
                    let w = Matrix::from_vec(d, d, gaussian_vec(spec.seed, mix_keys(&[1, i as u64, j as u64]), d * d, std));
                    let mut out = Vec::with_capacity(sizes[i] * sizes[j]);
                    for pi in 0..sizes[i] {
                        let left = table.vector(i, pi).expect("prompt within table");
                        for pj in 0..sizes[j] {
                            let wv = w.mul_vec(table.vector(j, pj).expect("prompt within table"));
                            out.push(dot(left, &wv));
                        }
                    }
                    out
                })
                .collect(),
        };
        Ok(Landscape {
            spec,
            n_agents: n,
            edges,
            unary,
            pair,
            sizes,
        })
    }

    pub fn spec(&self) -> &LandscapeSpec {
        &self.spec
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `w_iᵀΦ(p)` for every prompt of agent `i`.
    pub fn unary_scores(&self, agent: usize) -> &[f64] {
        &self.unary[agent]
    }

    fn check(&self, c: &PromptCombination) -> Result<(), EvaluatorError> {
        if c.len() != self.n_agents || c.0.iter().zip(&self.sizes).any(|(&p, &s)| p >= s) {
            return Err(EvaluatorError::InvalidSpec(format!(
                "combination {} does not fit domains {:?}",
                c.to_log_string(),
                self.sizes
            )));
        }
        Ok(())
    }

    fn logit(&self, c: &PromptCombination) -> f64 {
        let unary: f64 = c.0.iter().enumerate().map(|(i, &p)| self.unary[i][p]).sum::<f64>() / self.n_agents as f64;
        if self.spec.family == LandscapeFamily::Separable {
            return unary;
        }
        let coupling: f64 = self
            .edges
            .iter()
            .zip(&self.pair)
            .map(|(&(i, j), t)| t[c.0[i] * self.sizes[j] + c.0[j]])
            .sum();
        unary + self.spec.coupling_strength * coupling
    }

    /// Noiseless score; a pure function of `(spec, table, c)`.
    pub fn true_score(&self, c: &PromptCombination) -> Result<f64, EvaluatorError> {
        self.check(c)?;
        Ok(sigmoid(self.logit(c)))
    }

    /// Noisy observation for a given round. The noise draw depends only on
    /// `(seed, round)`, so replaying a round reproduces its observation.
    pub fn observe(&self, c: &PromptCombination, round: usize) -> Result<f64, EvaluatorError> {
        let clean = self.true_score(c)?;
        if self.spec.noise_sigma == 0.0 {
            return Ok(clean);
        }
        let mut rng = stream_rng(self.spec.seed, Stream::Noise, round as u64);
        Ok((clean + self.spec.noise_sigma * truncated_normal(&mut rng, 3.0)).clamp(0.0, 1.0))
    }

    /// Exact noiseless argmax by enumeration; returns `(c, score, evaluations)`.
    pub fn oracle_argmax(&self, cap: u64) -> Result<(PromptCombination, f64, u64), EvaluatorError> {
        let acq = |c: &PromptCombination| sigmoid(self.logit(c));
        let r = global_search(&acq, &self.sizes, cap)?;
        Ok((r.best, r.best_score, r.acquisition_evals))
    }

    /// Per-agent argmax of the unary terms alone. Exact for the separable
    /// family; for the coupled family it is the best separable approximation.
    pub fn separable_argmax(&self) -> PromptCombination {
        PromptCombination(self.unary.iter().map(|u| argmax_first(u)).collect())
    }
}

/// Standard normal conditioned on `|z| <= bound`, by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= bound {
            return z;
        }
    }
}

impl Evaluator for Landscape {
    fn evaluate(&mut self, c: &PromptCombination, ctx: &EvalContext<'_>) -> Result<Evaluation, EvaluatorError> {
        Ok(Evaluation {
            score: self.observe(c, ctx.round)?,
            n_instances: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteEvaluatorSpec {
    pub endpoint: String,
    pub timeout_s: f64,
    /// Additional attempts after the first failed one.
    pub retries: u32,
    /// Environment variable holding a bearer token, if any.
    pub auth_token_env: Option<String>,
    pub backoff_initial_ms: u64,
    pub backoff_factor: f64,
}

impl Default for RemoteEvaluatorSpec {
    fn default() -> Self {
        RemoteEvaluatorSpec {
            endpoint: String::new(),
            timeout_s: 600.0,
            retries: 3,
            auth_token_env: None,
            backoff_initial_ms: 500,
            backoff_factor: 2.0,
        }
    }
}

impl RemoteEvaluatorSpec {
    pub fn validate(&self) -> Result<(), EvaluatorError> {
        if self.endpoint.is_empty() {
            return Err(EvaluatorError::InvalidSpec("endpoint must be set".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(EvaluatorError::InvalidSpec("timeout_s must be > 0".into()));
        }
        if !(self.backoff_factor >= 1.0 && self.backoff_factor.is_finite()) {
            return Err(EvaluatorError::InvalidSpec("backoff_factor must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    combination: &'a [usize],
    run_id: &'a str,
    round: usize,
}

#[derive(Deserialize)]
struct RemoteResponse {
    score: f64,
    #[serde(default)]
    n_instances: Option<u64>,
}

enum Attempt {
    Retryable(EvaluatorError),
    Fatal(EvaluatorError),
}

/// Blocking HTTP client: one POST per evaluation.
pub struct RemoteEvaluator {
    spec: RemoteEvaluatorSpec,
    agent: ureq::Agent,
    token: Option<String>,
    requests_sent: u64,
}

impl RemoteEvaluator {
    pub fn new(spec: RemoteEvaluatorSpec) -> Result<Self, EvaluatorError> {
        spec.validate()?;
        let token = match &spec.auth_token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| EvaluatorError::InvalidSpec(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(spec.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteEvaluator {
            spec,
            agent,
            token,
            requests_sent: 0,
        })
    }

    pub fn requests_sent(&self) -> u64 {
        self.requests_sent
    }

    fn attempt(&mut self, body: &RemoteRequest<'_>) -> Result<Evaluation, Attempt> {
        self.requests_sent += 1;
        let mut req = self.agent.post(&self.spec.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(Attempt::Retryable(EvaluatorError::EvaluatorFailure(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        let parsed: RemoteResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(EvaluatorError::EvaluatorFailure(format!("malformed response body: {e}"))))?;
        let score = checked_score(parsed.score).map_err(Attempt::Fatal)?;
        Ok(Evaluation {
            score,
            n_instances: parsed.n_instances,
        })
    }
}

fn transport_error(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Timeout(_) => Attempt::Retryable(EvaluatorError::Timeout { attempts: 0 }),
        other => Attempt::Retryable(EvaluatorError::EvaluatorFailure(other.to_string())),
    }
}

impl Evaluator for RemoteEvaluator {
    fn evaluate(&mut self, c: &PromptCombination, ctx: &EvalContext<'_>) -> Result<Evaluation, EvaluatorError> {
        let body = RemoteRequest {
            combination: c.choices(),
            run_id: ctx.run_id,
            round: ctx.round,
        };
        let mut delay = self.spec.backoff_initial_ms as f64;
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(e) => return Ok(e),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(e)) => {
                    if attempts > self.spec.retries {
                        return Err(match e {
                            EvaluatorError::Timeout { .. } => EvaluatorError::Timeout { attempts },
                            other => other,
                        });
                    }
                    std::thread::sleep(Duration::from_secs_f64(delay / 1000.0));
                    delay *= self.spec.backoff_factor;
                }
            }
        }
    }
}
