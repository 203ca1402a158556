//! Acquisition maximizers over the discrete product of prompt domains.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::PromptCombination;

pub const DEFAULT_GLOBAL_CAP: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("invalid start combination: {0}")]
    InvalidStart(String),
    #[error("search space of {size} combinations exceeds the cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u64 },
    #[error("max_sweeps must be >= 1")]
    InvalidSweeps,
    #[error("every prompt domain must be non-empty")]
    EmptyDomain,
    #[error("visit order must be a permutation of 0..{0}")]
    InvalidOrder(usize),
}

/// Anything that scores a combination. Must be deterministic between model updates.
pub trait Acquisition {
    fn score(&self, c: &PromptCombination) -> f64;
}

impl<F> Acquisition for F
where
    F: Fn(&PromptCombination) -> f64,
{
    fn score(&self, c: &PromptCombination) -> f64 {
        self(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Coordinate,
    Global,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "coordinate" => Ok(Strategy::Coordinate),
            "global" => Ok(Strategy::Global),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown strategy '{other}' (expected coordinate, global or random)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Coordinate => "coordinate",
            Strategy::Global => "global",
            Strategy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub best: PromptCombination,
    pub best_score: f64,
    pub acquisition_evals: u64,
    pub sweeps: usize,
    /// Acquisition value of the incumbent after each coordinate commit.
    pub trace: Vec<f64>,
}

fn check_domains(sizes: &[usize]) -> Result<(), SearchError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(SearchError::EmptyDomain);
    }
    Ok(())
}

/// Scores of `(c_{-i}, p)` for every `p` in agent `i`'s domain.
pub fn scan_coordinate<A: Acquisition + ?Sized>(c: &PromptCombination, agent: usize, size: usize, acq: &A) -> Vec<f64> {
    let mut probe = c.clone();
    (0..size)
        .map(|p| {
            probe.0[agent] = p;
            acq.score(&probe)
        })
        .collect()
}

/// Index of the first maximum (lowest index wins ties).
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Cyclic per-agent argmax of `acq`, starting from `start`.
///
/// Agents are visited in `order` (ascending when `None`). With
/// `max_sweeps > 1`, sweeps repeat until one changes nothing.
pub fn coordinate_ascent<A: Acquisition + ?Sized>(
    start: &PromptCombination,
    acq: &A,
    sizes: &[usize],
    max_sweeps: usize,
    order: Option<&[usize]>,
) -> Result<SearchReport, SearchError> {
    check_domains(sizes)?;
    if max_sweeps == 0 {
        return Err(SearchError::InvalidSweeps);
    }
    if start.len() != sizes.len() {
        return Err(SearchError::InvalidStart(format!(
            "length {} but {} agents",
            start.len(),
            sizes.len()
        )));
    }
    if let Some((i, &p)) = start.0.iter().enumerate().find(|&(i, &p)| p >= sizes[i]) {
        return Err(SearchError::InvalidStart(format!("agent {i} choice {p} out of range")));
    }
    let ascending: Vec<usize> = (0..sizes.len()).collect();
    let order = order.unwrap_or(&ascending);
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != ascending {
        return Err(SearchError::InvalidOrder(sizes.len()));
    }

    let per_sweep: u64 = sizes.iter().map(|&s| s as u64).sum();
    let mut c = start.clone();
    let mut score = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(sizes.len() * max_sweeps);
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for &i in order {
            let scores = scan_coordinate(&c, i, sizes[i], acq);
            let best = argmax_first(&scores);
            if best != c.0[i] {
                changed = true;
                c.0[i] = best;
            }
            score = scores[best];
            trace.push(score);
        }
        if !changed {
            break;
        }
    }
    Ok(SearchReport {
        best: c,
        best_score: score,
        acquisition_evals: per_sweep * sweeps as u64,
        sweeps,
        trace,
    })
}

/// `Π|𝒫_i|`, or `None` on overflow.
pub fn space_size(sizes: &[usize]) -> Option<u128> {
    sizes.iter().try_fold(1u128, |acc, &s| acc.checked_mul(s as u128))
}

/// Advance `c` to the next combination in lexicographic order (last agent fastest).
fn next_lexicographic(c: &mut [usize], sizes: &[usize]) -> bool {
    for i in (0..c.len()).rev() {
        c[i] += 1;
        if c[i] < sizes[i] {
            return true;
        }
        c[i] = 0;
    }
    false
}

/// Exact argmax by full enumeration; ties go to the lexicographically smallest.
pub fn global_search<A: Acquisition + ?Sized>(acq: &A, sizes: &[usize], cap: u64) -> Result<SearchReport, SearchError> {
    check_domains(sizes)?;
    let size = space_size(sizes).unwrap_or(u128::MAX);
    if size > cap as u128 {
        return Err(SearchError::SpaceTooLarge { size, cap });
    }
    let mut c = PromptCombination(vec![0; sizes.len()]);
    let mut best = c.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut evals = 0u64;
    loop {
        let s = acq.score(&c);
        evals += 1;
        if s > best_score || evals == 1 {
            best_score = s;
            best.0.copy_from_slice(&c.0);
        }
        if !next_lexicographic(&mut c.0, sizes) {
            break;
        }
    }
    Ok(SearchReport {
        best,
        best_score,
        acquisition_evals: evals,
        sweeps: 0,
        trace: vec![best_score],
    })
}

/// Uniform independent choice per agent.
pub fn random_candidate<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> PromptCombination {
    PromptCombination(sizes.iter().map(|&s| rng.random_range(0..s)).collect())
}
