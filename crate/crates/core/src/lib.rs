//! Budgeted search for the best prompt combination in a fixed multi-agent
//! workflow.
//!
//! A graph-attention surrogate over the workflow DAG predicts the score of a
//! combination, a linear confidence bonus `σ(c) = sqrt(Φ(c)ᵀ M⁻¹ Φ(c))` drives
//! exploration, and each round maximizes `μ + α·σ` by coordinate ascent.

pub mod bandit;
pub mod cli;
pub mod embeddings;
pub mod evaluators;
pub mod matrix;
pub mod optimizer;
pub mod report;
pub mod rng;
pub mod runner;
pub mod search;
pub mod surrogate;
pub mod workflow;
