//! Linear confidence bonus over concatenated prompt embeddings.
//!
//! The information matrix `M = λI + Σ s·φφᵀ` is never stored: only `M⁻¹`
//! is kept, maintained by Sherman–Morrison rank-one updates.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("lambda must be finite and > 0, got {0}")]
    InvalidLambda(f64),
    #[error("update scale must be finite and >= 0, got {0}")]
    InvalidScale(f64),
    #[error("dimension must be >= 1")]
    InvalidDim,
    #[error("feature length {got} does not match bandit dimension {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite feature vector")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    dim: usize,
    inv_m: Matrix,
    lambda: f64,
    update_count: u64,
    update_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BanditSidecar {
    dim: usize,
    lambda: f64,
    update_count: u64,
    update_scale: f64,
}

impl BanditState {
    /// `M = λI`, so `M⁻¹ = I/λ`. Updates add `φφᵀ`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self, BanditError> {
        Self::with_update_scale(dim, lambda, 1.0)
    }

    /// Like [`BanditState::new`] but updates add `update_scale · φφᵀ`.
    pub fn with_update_scale(dim: usize, lambda: f64, update_scale: f64) -> Result<Self, BanditError> {
        if dim == 0 {
            return Err(BanditError::InvalidDim);
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(BanditError::InvalidLambda(lambda));
        }
        if !(update_scale >= 0.0 && update_scale.is_finite()) {
            return Err(BanditError::InvalidScale(update_scale));
        }
        let mut inv_m = Matrix::identity(dim);
        inv_m.as_mut_slice().iter_mut().for_each(|v| *v /= lambda);
        Ok(BanditState {
            dim,
            inv_m,
            lambda,
            update_count: 0,
            update_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn update_scale(&self) -> f64 {
        self.update_scale
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inv_m
    }

    fn check(&self, phi: &[f64]) -> Result<(), BanditError> {
        if phi.len() != self.dim {
            return Err(BanditError::ShapeMismatch {
                expected: self.dim,
                got: phi.len(),
            });
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(BanditError::NonFinite);
        }
        Ok(())
    }

    /// `φᵀ M⁻¹ φ`, unclamped.
    pub fn quadratic_form(&self, phi: &[f64]) -> Result<f64, BanditError> {
        self.check(phi)?;
        Ok((0..self.dim).map(|i| phi[i] * dot(self.inv_m.row(i), phi)).sum())
    }

    /// `σ = sqrt(max(0, φᵀ M⁻¹ φ))`.
    pub fn uncertainty(&self, phi: &[f64]) -> Result<f64, BanditError> {
        Ok(self.quadratic_form(phi)?.max(0.0).sqrt())
    }

    /// `M ← M + s·φφᵀ`, applied to the inverse directly:
    /// `M⁻¹ ← M⁻¹ − s·(M⁻¹φ)(M⁻¹φ)ᵀ / (1 + s·φᵀM⁻¹φ)`.
    pub fn update(&mut self, phi: &[f64]) -> Result<(), BanditError> {
        self.check(phi)?;
        self.update_count += 1;
        let u = self.inv_m.mul_vec(phi);
        let q = dot(phi, &u);
        let s = self.update_scale;
        if s == 0.0 || q == 0.0 {
            return Ok(());
        }
        let c = s / (1.0 + s * q);
        let n = self.dim;
        let data = self.inv_m.as_mut_slice();
        // c·(u_i·u_j) keeps the update bitwise symmetric.
        for i in 0..n {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            let row = &mut data[i * n..(i + 1) * n];
            for (v, uj) in row.iter_mut().zip(&u) {
                *v -= c * (ui * uj);
            }
        }
        Ok(())
    }

    /// Max `|M⁻¹[i][j] − M⁻¹[j][i]|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.inv_m.get(i, j) - self.inv_m.get(j, i)).abs());
            }
        }
        worst
    }

    /// Binary dump of `M⁻¹` (row-major little-endian `f64`) plus a JSON
    /// sidecar with `dim`, `lambda`, `update_count`, `update_scale`.
    pub fn save(&self, bin_path: &Path, json_path: &Path) -> Result<(), BanditError> {
        let io = |e: std::io::Error| BanditError::Checkpoint(e.to_string());
        let mut bytes = Vec::with_capacity(8 * self.dim * self.dim);
        for v in self.inv_m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin_path, bytes).map_err(io)?;
        let side = BanditSidecar {
            dim: self.dim,
            lambda: self.lambda,
            update_count: self.update_count,
            update_scale: self.update_scale,
        };
        let json = serde_json::to_string_pretty(&side).map_err(|e| BanditError::Checkpoint(e.to_string()))?;
        fs::write(json_path, json).map_err(io)
    }

    pub fn load(bin_path: &Path, json_path: &Path) -> Result<Self, BanditError> {
        let io = |e: std::io::Error| BanditError::Checkpoint(e.to_string());
        let side: BanditSidecar = serde_json::from_str(&fs::read_to_string(json_path).map_err(io)?)
            .map_err(|e| BanditError::Checkpoint(e.to_string()))?;
        let mut state = Self::with_update_scale(side.dim, side.lambda, side.update_scale)?;
        let bytes = fs::read(bin_path).map_err(io)?;
        if bytes.len() != 8 * side.dim * side.dim {
            return Err(BanditError::Checkpoint(format!(
                "expected {} bytes, found {}",
                8 * side.dim * side.dim,
                bytes.len()
            )));
        }
        for (v, chunk) in state.inv_m.as_mut_slice().iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        state.update_count = side.update_count;
        Ok(state)
    }
}

/// `μ + α·σ`.
pub fn ucb(mu: f64, sigma: f64, alpha: f64) -> f64 {
    mu + alpha * sigma
}

/// Seeded Gaussian sketch `R ∈ ℝ^{k×D}` with entries `N(0, 1/k)`, used to
/// shrink the bandit dimension when `D = N·d` is large.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    seed: u64,
    matrix: Matrix,
}

impl RandomProjection {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "projection dims must be >= 1");
        let mut rng = stream_rng(seed, Stream::Projection, ((in_dim as u64) << 32) | out_dim as u64);
        let normal = Normal::new(0.0, 1.0 / (out_dim as f64).sqrt()).unwrap();
        let data = (0..in_dim * out_dim).map(|_| normal.sample(&mut rng)).collect();
        RandomProjection {
            seed,
            matrix: Matrix::from_vec(out_dim, in_dim, data),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn project(&self, phi: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(phi)
    }
}
