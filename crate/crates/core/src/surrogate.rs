//! Graph-attention performance predictor `μ(c)`.
//!
//! Each agent is a node whose feature is its chosen prompt's embedding. A stack
//! of attention layers aggregates over the closed neighbourhood of every node
//! in the augmented adjacency, node states are mean-pooled, and a one-hidden-
//! layer MLP followed by a sigmoid maps the pooled vector into `(0, 1)`.
//!
//! Per layer and head, with `g_j = W h_j` and `a = [a_src; a_dst]`:
//!
//! ```text
//! e_ij   = LeakyReLU(a_src · g_i + a_dst · g_j)          j ∈ N(i) ∪ {i}
//! α_ij   = softmax_j(e_ij)
//! h'_i   = σ( mean_heads Σ_j α_ij g_j )
//! z      = mean_i h_i^(L)
//! μ      = sigmoid( w2 · relu(W1 z + b1) + b2 )
//! ```
//!
//! Gradients are computed by hand (no autodiff); [`grad_check`] compares them
//! against central finite differences.
//!
//! Parameters live in one flat `Vec<f64>` in this order, which is also the
//! checkpoint order: for each layer, for each head, `W` (row-major,
//! `hidden × in`) then `a` (`2·hidden`); then `W1` (row-major,
//! `hidden × hidden`), `b1`, `w2`, `b2`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::workflow::AugmentedAdjacency;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GAT1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training history is empty")]
    EmptyHistory,
    #[error("invalid surrogate config: {0}")]
    InvalidConfig(String),
    #[error("target {0} outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub hidden_dim: usize,
    pub n_gat_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub patience: usize,
    pub finetune_epochs: usize,
    pub leaky_slope: f64,
    pub activation: Activation,
    pub retrain_from_scratch: bool,
    /// Parameter-init and dropout seed. The optimizer derives one from its
    /// root seed when this is unset.
    pub seed: Option<u64>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hidden_dim: 32,
            n_gat_layers: 1,
            n_heads: 1,
            dropout: 0.05,
            learning_rate: 5e-3,
            weight_decay: 1e-5,
            pretrain_epochs: 800,
            patience: 200,
            finetune_epochs: 100,
            leaky_slope: 0.2,
            activation: Activation::Elu,
            retrain_from_scratch: false,
            seed: None,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if self.n_gat_layers == 0 {
            return bad("n_gat_layers must be >= 1");
        }
        if self.n_heads == 0 {
            return bad("n_heads must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.patience > self.pretrain_epochs {
            return bad("patience must not exceed pretrain_epochs");
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

/// One history entry: node features, graph, observed score.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub features: Matrix,
    pub adjacency: AugmentedAdjacency,
    pub target: f64,
}

impl TrainingSample {
    pub fn new(features: Matrix, adjacency: AugmentedAdjacency, target: f64) -> Result<Self, SurrogateError> {
        if !(0.0..=1.0).contains(&target) {
            return Err(SurrogateError::TargetOutOfRange(target));
        }
        if features.rows() != adjacency.len() {
            return Err(SurrogateError::ShapeMismatch(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                adjacency.len()
            )));
        }
        Ok(TrainingSample {
            features,
            adjacency,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Per-epoch training loss (dropout active), measured before each update.
    pub loss_history: Vec<f64>,
    /// Loss of the returned parameters with dropout off.
    pub final_loss: f64,
}

/// Borrowed parameters of one attention head.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams<'a> {
    /// `hidden × in`, row-major.
    pub w: &'a [f64],
    /// `2·hidden`: source half then neighbour half.
    pub a: &'a [f64],
    pub hidden: usize,
    pub in_dim: usize,
}

#[derive(Debug, Clone, Copy)]
struct HeadSpan {
    w: usize,
    a: usize,
    in_dim: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    heads: Vec<Vec<HeadSpan>>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(in_dim: usize, cfg: &SurrogateConfig) -> Self {
        let h = cfg.hidden_dim;
        let mut off = 0;
        let mut heads = Vec::with_capacity(cfg.n_gat_layers);
        for l in 0..cfg.n_gat_layers {
            let layer_in = if l == 0 { in_dim } else { h };
            let mut layer = Vec::with_capacity(cfg.n_heads);
            for _ in 0..cfg.n_heads {
                let w = off;
                off += h * layer_in;
                let a = off;
                off += 2 * h;
                layer.push(HeadSpan { w, a, in_dim: layer_in });
            }
            heads.push(layer);
        }
        let w1 = off;
        off += h * h;
        let b1 = off;
        off += h;
        let w2 = off;
        off += h;
        let b2 = off;
        off += 1;
        Layout {
            heads,
            w1,
            b1,
            w2,
            b2,
            total: off,
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `e_ij = LeakyReLU(aᵀ [W h_i ‖ W h_j])`.
pub fn attention_logits(h_i: &[f64], h_j: &[f64], w: &Matrix, a: &[f64], slope: f64) -> Result<f64, SurrogateError> {
    let hidden = w.rows();
    if h_i.len() != w.cols() || h_j.len() != w.cols() || a.len() != 2 * hidden {
        return Err(SurrogateError::ShapeMismatch(format!(
            "W is {}x{}, |h_i|={}, |h_j|={}, |a|={}",
            hidden,
            w.cols(),
            h_i.len(),
            h_j.len(),
            a.len()
        )));
    }
    let (gi, gj) = (w.mul_vec(h_i), w.mul_vec(h_j));
    Ok(leaky(dot(&a[..hidden], &gi) + dot(&a[hidden..], &gj), slope))
}

/// Numerically stable softmax over one node's closed-neighbourhood logits.
pub fn attention_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn neighbor_lists(adj: &AugmentedAdjacency) -> Vec<Vec<usize>> {
    (0..adj.len()).map(|i| adj.closed_row(i).collect()).collect()
}

struct HeadCache {
    /// `N × hidden`, rows `W h_j`.
    g: Matrix,
    /// Pre-LeakyReLU scores, per node, aligned with the neighbour list.
    scores: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    /// Dropout multipliers on `alpha` (empty when dropout is off).
    mask: Vec<Vec<f64>>,
}

struct LayerCache {
    input: Matrix,
    heads: Vec<HeadCache>,
    pre: Matrix,
    post: Matrix,
    /// Dropout multipliers on `post` (empty when off).
    mask: Vec<f64>,
}

struct ForwardCache {
    nbrs: Vec<Vec<usize>>,
    layers: Vec<LayerCache>,
    /// Layer-stack output after dropout.
    out: Matrix,
    z: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    r_mask: Vec<f64>,
    mu: f64,
}

/// Dropout source for a training forward pass.
struct Dropout<'a> {
    p: f64,
    rng: &'a mut StreamRng,
}

impl Dropout<'_> {
    fn masks(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 - self.p;
        (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }
}

fn check_heads(heads: &[HeadParams<'_>], features: &Matrix) -> Result<(), SurrogateError> {
    for h in heads {
        if h.in_dim != features.cols() || h.w.len() != h.hidden * h.in_dim || h.a.len() != 2 * h.hidden {
            return Err(SurrogateError::ShapeMismatch(format!(
                "head expects in={} hidden={}, features have {} columns",
                h.in_dim,
                h.hidden,
                features.cols()
            )));
        }
    }
    Ok(())
}

fn layer_forward(
    input: &Matrix,
    nbrs: &[Vec<usize>],
    heads: &[HeadParams<'_>],
    slope: f64,
    act: Activation,
    mut dropout: Option<&mut Dropout<'_>>,
) -> LayerCache {
    let n = input.rows();
    let hidden = heads[0].hidden;
    let head_scale = 1.0 / heads.len() as f64;
    let mut pre = Matrix::zeros(n, hidden);
    let mut caches = Vec::with_capacity(heads.len());
    for head in heads {
        let mut g = Matrix::zeros(n, hidden);
        for j in 0..n {
            let x = input.row(j);
            let row = g.row_mut(j);
            for (k, out) in row.iter_mut().enumerate() {
                *out = dot(&head.w[k * head.in_dim..(k + 1) * head.in_dim], x);
            }
        }
        let (a_src, a_dst) = head.a.split_at(hidden);
        let src: Vec<f64> = (0..n).map(|i| dot(a_src, g.row(i))).collect();
        let dst: Vec<f64> = (0..n).map(|j| dot(a_dst, g.row(j))).collect();
        let mut scores = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        let mut masks = Vec::new();
        for i in 0..n {
            let s: Vec<f64> = nbrs[i].iter().map(|&j| src[i] + dst[j]).collect();
            let e: Vec<f64> = s.iter().map(|&x| leaky(x, slope)).collect();
            let alpha = attention_weights(&e);
            let mask = match dropout.as_deref_mut() {
                Some(d) => d.masks(alpha.len()),
                None => Vec::new(),
            };
            let out = pre.row_mut(i);
            for (k, &j) in nbrs[i].iter().enumerate() {
                let m = mask.get(k).copied().unwrap_or(1.0);
                let coef = alpha[k] * m * head_scale;
                if coef != 0.0 {
                    for (o, gj) in out.iter_mut().zip(g.row(j)) {
                        *o += coef * gj;
                    }
                }
            }
            scores.push(s);
            alphas.push(alpha);
            if !mask.is_empty() {
                masks.push(mask);
            }
        }
        caches.push(HeadCache {
            g,
            scores,
            alpha: alphas,
            mask: masks,
        });
    }
    let mut post = pre.clone();
    for v in post.as_mut_slice() {
        *v = act.apply(*v);
    }
    let mask = match dropout {
        Some(d) => d.masks(n * hidden),
        None => Vec::new(),
    };
    LayerCache {
        input: input.clone(),
        heads: caches,
        pre,
        post,
        mask,
    }
}

/// One attention layer (dropout off): `h'_i = σ(mean_heads Σ_j α_ij W h_j)`.
pub fn gat_layer(
    features: &Matrix,
    adj: &AugmentedAdjacency,
    heads: &[HeadParams<'_>],
    slope: f64,
    activation: Activation,
) -> Result<Matrix, SurrogateError> {
    if heads.is_empty() {
        return Err(SurrogateError::ShapeMismatch("no attention heads".to_string()));
    }
    if features.rows() != adj.len() {
        return Err(SurrogateError::ShapeMismatch(format!(
            "{} feature rows for {} nodes",
            features.rows(),
            adj.len()
        )));
    }
    check_heads(heads, features)?;
    let nbrs = neighbor_lists(adj);
    Ok(layer_forward(features, &nbrs, heads, slope, activation, None).post)
}

/// GAT + mean pooling + MLP head with flat parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    config: SurrogateConfig,
    in_dim: usize,
    seed: u64,
    params: Vec<f64>,
    train_calls: u64,
    total_steps: u64,
}

impl SurrogateModel {
    /// Glorot-uniform weights, zero biases, seeded from `config.seed` (or 0).
    pub fn new(config: SurrogateConfig, in_dim: usize) -> Result<Self, SurrogateError> {
        config.validate()?;
        if in_dim == 0 {
            return Err(SurrogateError::ShapeMismatch("input dim must be >= 1".to_string()));
        }
        let seed = config.seed.unwrap_or(0);
        let layout = Layout::new(in_dim, &config);
        let mut model = SurrogateModel {
            config,
            in_dim,
            seed,
            params: vec![0.0; layout.total],
            train_calls: 0,
            total_steps: 0,
        };
        model.reinitialize();
        Ok(model)
    }

    /// All parameters zero (prediction is exactly 0.5).
    pub fn zeroed(config: SurrogateConfig, in_dim: usize) -> Result<Self, SurrogateError> {
        let mut m = Self::new(config, in_dim)?;
        m.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    /// Redraw the initial parameters from the init seed.
    pub fn reinitialize(&mut self) {
        let layout = self.layout();
        let h = self.config.hidden_dim;
        let mut rng = stream_rng(self.seed, Stream::Init, 0);
        let mut fill = |params: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in params {
                *p = rng.random_range(-limit..limit);
            }
        };
        for layer in &layout.heads {
            for s in layer {
                fill(&mut self.params[s.w..s.w + h * s.in_dim], s.in_dim, h);
                fill(&mut self.params[s.a..s.a + 2 * h], 2 * h, 1);
            }
        }
        fill(&mut self.params[layout.w1..layout.w1 + h * h], h, h);
        self.params[layout.b1..layout.b1 + h].iter_mut().for_each(|p| *p = 0.0);
        fill(&mut self.params[layout.w2..layout.w2 + h], h, 1);
        self.params[layout.b2] = 0.0;
    }

    fn layout(&self) -> Layout {
        Layout::new(self.in_dim, &self.config)
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), SurrogateError> {
        if params.len() != self.params.len() {
            return Err(SurrogateError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn train_calls(&self) -> u64 {
        self.train_calls
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Parameters of every head in layer `l`.
    pub fn layer_heads(&self, l: usize) -> Vec<HeadParams<'_>> {
        let h = self.config.hidden_dim;
        self.layout().heads[l]
            .iter()
            .map(|s| HeadParams {
                w: &self.params[s.w..s.w + h * s.in_dim],
                a: &self.params[s.a..s.a + 2 * h],
                hidden: h,
                in_dim: s.in_dim,
            })
            .collect()
    }

    fn check_input(&self, features: &Matrix, adj: &AugmentedAdjacency) -> Result<(), SurrogateError> {
        if features.cols() != self.in_dim {
            return Err(SurrogateError::ShapeMismatch(format!(
                "model expects {}-dim node features, got {}",
                self.in_dim,
                features.cols()
            )));
        }
        if features.rows() != adj.len() || features.rows() == 0 {
            return Err(SurrogateError::ShapeMismatch(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                adj.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, features: &Matrix, adj: &AugmentedAdjacency, mut dropout: Option<&mut Dropout<'_>>) -> ForwardCache {
        let layout = self.layout();
        let h = self.config.hidden_dim;
        let nbrs = neighbor_lists(adj);
        let n = features.rows();
        let mut layers = Vec::with_capacity(layout.heads.len());
        let mut current = features.clone();
        for l in 0..layout.heads.len() {
            let heads = self.layer_heads(l);
            let cache = layer_forward(
                &current,
                &nbrs,
                &heads,
                self.config.leaky_slope,
                self.config.activation,
                dropout.as_deref_mut(),
            );
            current = cache.post.clone();
            if !cache.mask.is_empty() {
                for (v, m) in current.as_mut_slice().iter_mut().zip(&cache.mask) {
                    *v *= m;
                }
            }
            layers.push(cache);
        }
        let mut z = vec![0.0; h];
        for i in 0..n {
            for (zk, v) in z.iter_mut().zip(current.row(i)) {
                *zk += v;
            }
        }
        z.iter_mut().for_each(|v| *v /= n as f64);

        let w1 = &self.params[layout.w1..layout.w1 + h * h];
        let b1 = &self.params[layout.b1..layout.b1 + h];
        let u: Vec<f64> = (0..h).map(|k| dot(&w1[k * h..(k + 1) * h], &z) + b1[k]).collect();
        let r: Vec<f64> = u.iter().map(|&x| x.max(0.0)).collect();
        let r_mask = match dropout {
            Some(d) => d.masks(h),
            None => Vec::new(),
        };
        let w2 = &self.params[layout.w2..layout.w2 + h];
        let o: f64 = r
            .iter()
            .enumerate()
            .map(|(k, &rk)| w2[k] * rk * r_mask.get(k).copied().unwrap_or(1.0))
            .sum::<f64>()
            + self.params[layout.b2];
        ForwardCache {
            nbrs,
            layers,
            out: current,
            z,
            u,
            r,
            r_mask,
            mu: sigmoid(o),
        }
    }

    /// Accumulate `d_mu · ∂μ/∂θ` into `grads`.
    fn backward(&self, cache: &ForwardCache, d_mu: f64, grads: &mut [f64]) {
        let layout = self.layout();
        let h = self.config.hidden_dim;
        let n = cache.out.rows();
        let mu = cache.mu;
        let d_o = d_mu * mu * (1.0 - mu);
        grads[layout.b2] += d_o;
        let w1 = &self.params[layout.w1..layout.w1 + h * h];
        let w2 = &self.params[layout.w2..layout.w2 + h];
        let mut d_u = vec![0.0; h];
        for k in 0..h {
            let m = cache.r_mask.get(k).copied().unwrap_or(1.0);
            grads[layout.w2 + k] += d_o * cache.r[k] * m;
            if cache.u[k] > 0.0 {
                d_u[k] = d_o * w2[k] * m;
            }
        }
        let mut d_z = vec![0.0; h];
        for k in 0..h {
            if d_u[k] == 0.0 {
                continue;
            }
            grads[layout.b1 + k] += d_u[k];
            for c in 0..h {
                grads[layout.w1 + k * h + c] += d_u[k] * cache.z[c];
                d_z[c] += d_u[k] * w1[k * h + c];
            }
        }

        // Gradient w.r.t. the dropped output of the current layer.
        let mut d_out = Matrix::zeros(n, h);
        for i in 0..n {
            for (d, dz) in d_out.row_mut(i).iter_mut().zip(&d_z) {
                *d = dz / n as f64;
            }
        }
        let slope = self.config.leaky_slope;
        let act = self.config.activation;
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let spans = &layout.heads[l];
            let in_dim = lc.input.cols();
            let head_scale = 1.0 / spans.len() as f64;
            let mut d_pre = Matrix::zeros(n, h);
            for idx in 0..n * h {
                let m = lc.mask.get(idx).copied().unwrap_or(1.0);
                let x = lc.pre.as_slice()[idx];
                let y = lc.post.as_slice()[idx];
                d_pre.as_mut_slice()[idx] = d_out.as_slice()[idx] * m * act.derivative(x, y);
            }
            let mut d_input = Matrix::zeros(n, in_dim);
            for (hc, span) in lc.heads.iter().zip(spans) {
                let a = &self.params[span.a..span.a + 2 * h];
                let (a_src, a_dst) = a.split_at(h);
                let mut d_g = Matrix::zeros(n, h);
                for i in 0..n {
                    let nb = &cache.nbrs[i];
                    let alpha = &hc.alpha[i];
                    let dpi = d_pre.row(i);
                    // dL/dα_ij through the (dropped) coefficient.
                    let mut d_alpha = vec![0.0; nb.len()];
                    for (k, &j) in nb.iter().enumerate() {
                        let m = hc.mask.get(i).map_or(1.0, |mm| mm[k]);
                        let coef = alpha[k] * m * head_scale;
                        let gj = hc.g.row(j);
                        d_alpha[k] = dot(dpi, gj) * m * head_scale;
                        if coef != 0.0 {
                            for (dg, dp) in d_g.row_mut(j).iter_mut().zip(dpi) {
                                *dg += coef * dp;
                            }
                        }
                    }
                    let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                    for (k, &j) in nb.iter().enumerate() {
                        let d_e = alpha[k] * (d_alpha[k] - weighted);
                        let d_s = d_e * leaky_grad(hc.scores[i][k], slope);
                        if d_s == 0.0 {
                            continue;
                        }
                        let (gi, gj) = (hc.g.row(i).to_vec(), hc.g.row(j).to_vec());
                        for c in 0..h {
                            grads[span.a + c] += d_s * gi[c];
                            grads[span.a + h + c] += d_s * gj[c];
                        }
                        for (dg, ac) in d_g.row_mut(i).iter_mut().zip(a_src) {
                            *dg += d_s * ac;
                        }
                        for (dg, ac) in d_g.row_mut(j).iter_mut().zip(a_dst) {
                            *dg += d_s * ac;
                        }
                    }
                }
                // g = input Wᵀ
                let w = &self.params[span.w..span.w + h * in_dim];
                for j in 0..n {
                    let x = lc.input.row(j);
                    let dgj = d_g.row(j);
                    for k in 0..h {
                        let dk = dgj[k];
                        if dk == 0.0 {
                            continue;
                        }
                        let wrow = &w[k * in_dim..(k + 1) * in_dim];
                        let grow = &mut grads[span.w + k * in_dim..span.w + (k + 1) * in_dim];
                        for c in 0..in_dim {
                            grow[c] += dk * x[c];
                        }
                        for (di, wc) in d_input.row_mut(j).iter_mut().zip(wrow) {
                            *di += dk * wc;
                        }
                    }
                }
            }
            d_out = d_input;
        }
    }

    /// `μ(c)` with dropout disabled.
    pub fn predict(&self, features: &Matrix, adj: &AugmentedAdjacency) -> Result<f64, SurrogateError> {
        self.check_input(features, adj)?;
        Ok(self.forward(features, adj, None).mu)
    }

    /// Node states after the attention stack (dropout off).
    pub fn node_embeddings(&self, features: &Matrix, adj: &AugmentedAdjacency) -> Result<Matrix, SurrogateError> {
        self.check_input(features, adj)?;
        Ok(self.forward(features, adj, None).out)
    }

    /// Mean squared error over `samples` with dropout off.
    pub fn loss(&self, samples: &[TrainingSample]) -> Result<f64, SurrogateError> {
        if samples.is_empty() {
            return Err(SurrogateError::EmptyHistory);
        }
        let mut total = 0.0;
        for s in samples {
            let mu = self.predict(&s.features, &s.adjacency)?;
            total += (mu - s.target).powi(2);
        }
        Ok(total / samples.len() as f64)
    }

    /// Analytic gradient of the dropout-free MSE over `samples`.
    pub fn loss_gradient(&self, samples: &[TrainingSample]) -> Result<Vec<f64>, SurrogateError> {
        if samples.is_empty() {
            return Err(SurrogateError::EmptyHistory);
        }
        let mut grads = vec![0.0; self.params.len()];
        let scale = 1.0 / samples.len() as f64;
        for s in samples {
            self.check_input(&s.features, &s.adjacency)?;
            let cache = self.forward(&s.features, &s.adjacency, None);
            self.backward(&cache, 2.0 * (cache.mu - s.target) * scale, &mut grads);
        }
        Ok(grads)
    }

    /// Full-batch AdamW on the MSE.
    ///
    /// `Pretrain` runs up to `pretrain_epochs`, stops after `patience` epochs
    /// without a new best training loss and restores the best parameters.
    /// `Finetune` runs `finetune_epochs` from the current parameters.
    /// Adam moments start fresh on every call; dropout draws come from a stream
    /// keyed by the call count, so a checkpointed model resumes identically.
    pub fn train(&mut self, samples: &[TrainingSample], mode: TrainMode) -> Result<TrainReport, SurrogateError> {
        if samples.is_empty() {
            return Err(SurrogateError::EmptyHistory);
        }
        for s in samples {
            self.check_input(&s.features, &s.adjacency)?;
            if !(0.0..=1.0).contains(&s.target) {
                return Err(SurrogateError::TargetOutOfRange(s.target));
            }
        }
        let cfg = self.config.clone();
        let epochs = match mode {
            TrainMode::Pretrain => cfg.pretrain_epochs,
            TrainMode::Finetune => cfg.finetune_epochs,
        };
        let mut rng = stream_rng(self.seed, Stream::Dropout, self.train_calls);
        self.train_calls += 1;

        let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
        let np = self.params.len();
        let mut m = vec![0.0; np];
        let mut v = vec![0.0; np];
        let mut grads = vec![0.0; np];
        let scale = 1.0 / samples.len() as f64;
        let mut history = Vec::with_capacity(epochs);
        let mut best = (f64::INFINITY, self.params.clone());
        let mut since_best = 0usize;

        for epoch in 0..epochs {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for s in samples {
                let cache = if cfg.dropout > 0.0 {
                    let mut d = Dropout { p: cfg.dropout, rng: &mut rng };
                    self.forward(&s.features, &s.adjacency, Some(&mut d))
                } else {
                    self.forward(&s.features, &s.adjacency, None)
                };
                let err = cache.mu - s.target;
                loss += err * err * scale;
                self.backward(&cache, 2.0 * err * scale, &mut grads);
            }
            history.push(loss);

            if mode == TrainMode::Pretrain {
                if loss < best.0 {
                    best = (loss, self.params.clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }

            let t = (epoch + 1) as i32;
            let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for k in 0..np {
                let g = grads[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let step = (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                self.params[k] -= cfg.learning_rate * (step + cfg.weight_decay * self.params[k]);
            }
            self.total_steps += 1;
        }
        if mode == TrainMode::Pretrain && best.0.is_finite() {
            self.params = best.1;
        }
        Ok(TrainReport {
            epochs_run: history.len(),
            loss_history: history,
            final_loss: self.loss(samples)?,
        })
    }

    /// Serialize as the `GAT1` blob.
    ///
    /// Header (little-endian): magic, `u32` version, `u32` in_dim, `u32`
    /// hidden, `u32` layers, `u32` heads, `u64` init seed, `u64` train calls,
    /// `u64` total steps, `u64` parameter count; then parameters as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            self.in_dim as u32,
            self.config.hidden_dim as u32,
            self.config.n_gat_layers as u32,
            self.config.n_heads as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.seed, self.train_calls, self.total_steps, self.params.len() as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(config: SurrogateConfig, bytes: &[u8]) -> Result<Self, SurrogateError> {
        let err = |m: &str| SurrogateError::Checkpoint(m.to_string());
        if bytes.len() < 56 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(err("missing GAT1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != CHECKPOINT_VERSION {
            return Err(err("unsupported version"));
        }
        let in_dim = u32_at(8) as usize;
        if (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize)
            != (config.hidden_dim, config.n_gat_layers, config.n_heads)
        {
            return Err(err("dimensions disagree with config"));
        }
        let mut model = SurrogateModel::new(config, in_dim)?;
        model.seed = u64_at(24);
        model.train_calls = u64_at(32);
        model.total_steps = u64_at(40);
        let count = u64_at(48) as usize;
        if count != model.params.len() || bytes.len() != 56 + 8 * count {
            return Err(err("parameter count mismatch"));
        }
        for (k, chunk) in bytes[56..].chunks_exact(8).enumerate() {
            model.params[k] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(err("non-finite parameter"));
        }
        Ok(model)
    }

    /// Write the blob plus a JSON sidecar holding the config.
    pub fn save(&self, bin_path: &Path, json_path: &Path) -> Result<(), SurrogateError> {
        let io = |e: std::io::Error| SurrogateError::Checkpoint(e.to_string());
        fs::write(bin_path, self.to_bytes()).map_err(io)?;
        let json = serde_json::to_string_pretty(&self.config).map_err(|e| SurrogateError::Checkpoint(e.to_string()))?;
        fs::write(json_path, json).map_err(io)
    }

    pub fn load(bin_path: &Path, json_path: &Path) -> Result<Self, SurrogateError> {
        let io = |e: std::io::Error| SurrogateError::Checkpoint(e.to_string());
        let config: SurrogateConfig = serde_json::from_str(&fs::read_to_string(json_path).map_err(io)?)
            .map_err(|e| SurrogateError::Checkpoint(e.to_string()))?;
        Self::from_bytes(config, &fs::read(bin_path).map_err(io)?)
    }
}

/// Max relative error between the analytic gradient of the single-sample
/// squared error and central finite differences with step `epsilon`.
///
/// Dropout is never applied here, whatever the model config says.
pub fn grad_check(model: &SurrogateModel, sample: &TrainingSample, epsilon: f64) -> Result<f64, SurrogateError> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(SurrogateError::InvalidConfig("epsilon must be in (0, 1e-3]".to_string()));
    }
    let samples = std::slice::from_ref(sample);
    let analytic = model.loss_gradient(samples)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &ga) in analytic.iter().enumerate() {
        let orig = model.params[k];
        probe.params[k] = orig + epsilon;
        let plus = probe.loss(samples)?;
        probe.params[k] = orig - epsilon;
        let minus = probe.loss(samples)?;
        probe.params[k] = orig;
        let fd = (plus - minus) / (2.0 * epsilon);
        let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{augment_adjacency, build_workflow};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn small_config(hidden: usize) -> SurrogateConfig {
        SurrogateConfig {
            hidden_dim: hidden,
            seed: Some(3),
            ..SurrogateConfig::default()
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = StreamRng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    #[test]
    fn attention_logit_examples() {
        let w = Matrix::identity(2);
        assert_eq!(attention_logits(&[1.0, 2.0], &[3.0, 4.0], &w, &[0.0; 4], 0.2).unwrap(), 0.0);
        // aᵀ[Wh_i‖Wh_j] = -1
        let v = attention_logits(&[1.0, 0.0], &[0.0, 0.0], &w, &[-1.0, 0.0, 0.0, 0.0], 0.2).unwrap();
        assert!((v + 0.2).abs() < 1e-15);
        let v = attention_logits(&[1.0, 0.0], &[0.0, 0.0], &w, &[1.0, 0.0, 0.0, 0.0], 0.2).unwrap();
        assert_eq!(v, 1.0);
        assert!(matches!(
            attention_logits(&[1.0], &[1.0, 0.0], &w, &[0.0; 4], 0.2),
            Err(SurrogateError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn attention_weight_examples() {
        assert_eq!(attention_weights(&[0.7]), vec![1.0]);
        assert_eq!(attention_weights(&[1.3, 1.3]), vec![0.5, 0.5]);
        let w = attention_weights(&[0.0, 3f64.ln()]);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let w = attention_weights(&[1000.0, -1000.0, 999.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gat_layer_single_node_identity() {
        let adj = augment_adjacency(&build_workflow(1, &[]).unwrap());
        let w = Matrix::identity(3);
        let a = [0.3, -0.1, 0.2, 0.5, 0.0, 1.0];
        let head = HeadParams { w: w.as_slice(), a: &a, hidden: 3, in_dim: 3 };
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]);
        let out = gat_layer(&x, &adj, &[head], 0.2, Activation::Elu).unwrap();
        let expect: Vec<f64> = x.row(0).iter().map(|&v| Activation::Elu.apply(v)).collect();
        assert_eq!(out.row(0), expect.as_slice());
    }

    #[test]
    fn gat_layer_complete_graph_equal_features() {
        let adj = augment_adjacency(&build_workflow(3, &[(0, 1), (0, 2), (1, 2)]).unwrap());
        let w = random_matrix(4, 2, 1);
        let a: Vec<f64> = random_matrix(1, 8, 2).into_vec();
        let head = HeadParams { w: w.as_slice(), a: &a, hidden: 4, in_dim: 2 };
        let x = Matrix::from_rows(&[vec![0.3, -0.7], vec![0.3, -0.7], vec![0.3, -0.7]]);
        let out = gat_layer(&x, &adj, &[head], 0.2, Activation::Elu).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));
    }

    #[test]
    fn zero_parameters_predict_one_half() {
        let m = SurrogateModel::zeroed(small_config(4), 3).unwrap();
        let adj = augment_adjacency(&build_workflow(2, &[(0, 1)]).unwrap());
        assert_eq!(m.predict(&random_matrix(2, 3, 5), &adj).unwrap(), 0.5);
    }

    #[test]
    fn predict_is_inside_unit_interval_and_repeatable() {
        let cfg = SurrogateConfig { dropout: 0.5, ..small_config(6) };
        let m = SurrogateModel::new(cfg, 3).unwrap();
        let adj = augment_adjacency(&build_workflow(3, &[(0, 1), (1, 2)]).unwrap());
        for seed in 0..20 {
            let x = random_matrix(3, 3, seed);
            let mu = m.predict(&x, &adj).unwrap();
            assert!(mu > 0.0 && mu < 1.0);
            assert_eq!(mu, m.predict(&x, &adj).unwrap());
        }
    }

    #[test]
    fn predict_rejects_wrong_shapes() {
        let m = SurrogateModel::new(small_config(4), 3).unwrap();
        let adj = augment_adjacency(&build_workflow(2, &[]).unwrap());
        assert!(matches!(m.predict(&random_matrix(2, 4, 1), &adj), Err(SurrogateError::ShapeMismatch(_))));
        assert!(matches!(m.predict(&random_matrix(3, 3, 1), &adj), Err(SurrogateError::ShapeMismatch(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SurrogateConfig::default().validate().is_ok());
        for bad in [
            SurrogateConfig { hidden_dim: 0, ..Default::default() },
            SurrogateConfig { dropout: 1.0, ..Default::default() },
            SurrogateConfig { learning_rate: 0.0, ..Default::default() },
            SurrogateConfig { patience: 900, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn sample(n: usize, d: usize, seed: u64, target: f64) -> TrainingSample {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        let adj = augment_adjacency(&build_workflow(n, &edges).unwrap());
        TrainingSample::new(random_matrix(n, d, seed), adj, target).unwrap()
    }

    #[test]
    fn single_sample_overfit() {
        let cfg = SurrogateConfig { dropout: 0.0, ..small_config(8) };
        let mut m = SurrogateModel::new(cfg, 4).unwrap();
        let s = sample(3, 4, 10, 0.9);
        let report = m.train(std::slice::from_ref(&s), TrainMode::Pretrain).unwrap();
        assert!(report.loss_history[..10].windows(2).all(|w| w[1] < w[0]));
        let mu = m.predict(&s.features, &s.adjacency).unwrap();
        assert!((mu - 0.9).abs() < 0.05, "mu = {mu}");
    }

    #[test]
    fn duplicate_inputs_fit_the_mean() {
        let mut m = SurrogateModel::new(small_config(8), 4).unwrap();
        let a = sample(3, 4, 11, 0.2);
        let b = TrainingSample { target: 0.8, ..a.clone() };
        m.train(&[a.clone(), b], TrainMode::Pretrain).unwrap();
        let mu = m.predict(&a.features, &a.adjacency).unwrap();
        assert!((mu - 0.5).abs() < 0.05, "mu = {mu}");
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<TrainingSample> = (0..4).map(|k| sample(3, 4, 20 + k, 0.1 + 0.2 * k as f64)).collect();
        let run = || {
            let mut m = SurrogateModel::new(small_config(6), 4).unwrap();
            m.train(&data, TrainMode::Pretrain).unwrap();
            m.train(&data, TrainMode::Finetune).unwrap();
            m
        };
        let (a, b) = (run(), run());
        let bits = |m: &SurrogateModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.train_calls(), 2);
    }

    #[test]
    fn finetune_runs_fixed_epochs() {
        let data = vec![sample(2, 3, 1, 0.4)];
        let mut m = SurrogateModel::new(small_config(4), 3).unwrap();
        let r = m.train(&data, TrainMode::Finetune).unwrap();
        assert_eq!(r.epochs_run, 100);
        assert!(matches!(m.train(&[], TrainMode::Finetune), Err(SurrogateError::EmptyHistory)));
    }

    #[test]
    fn early_stopping_triggers_and_restores_best() {
        // A constant-target problem converges, then the loss plateaus.
        let cfg = SurrogateConfig { dropout: 0.0, pretrain_epochs: 800, patience: 20, ..small_config(4) };
        let mut m = SurrogateModel::new(cfg, 3).unwrap();
        let data = vec![sample(2, 3, 2, 0.5)];
        let r = m.train(&data, TrainMode::Pretrain).unwrap();
        let best = r.loss_history.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(r.epochs_run < 800);
        assert!((r.final_loss - best).abs() <= 1e-12 + best * 1e-9);
    }

    #[test]
    fn grad_check_examples() {
        let m = SurrogateModel::new(SurrogateConfig { hidden_dim: 5, seed: Some(9), ..Default::default() }, 4).unwrap();
        let s = sample(3, 4, 13, 0.3);
        let err = grad_check(&m, &s, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");

        let mu = m.predict(&s.features, &s.adjacency).unwrap();
        let exact = TrainingSample { target: mu, ..s.clone() };
        assert!(m.loss_gradient(std::slice::from_ref(&exact)).unwrap().iter().all(|g| *g == 0.0));
        // Analytic gradient is exactly zero; the FD residual is O(ε²) against the 1e-8 floor.
        assert!(grad_check(&m, &exact, 1e-5).unwrap() < 1e-3);
        assert!(grad_check(&m, &s, 1e-2).is_err());
    }

    #[test]
    fn grad_check_ignores_configured_dropout() {
        let m = SurrogateModel::new(SurrogateConfig { hidden_dim: 5, dropout: 0.5, seed: Some(1), ..Default::default() }, 4).unwrap();
        let s = sample(3, 4, 14, 0.6);
        let a = grad_check(&m, &s, 1e-5).unwrap();
        assert_eq!(a, grad_check(&m, &s, 1e-5).unwrap());
        assert!(a < 1e-4);
    }

    #[test]
    fn grad_check_multi_layer_multi_head() {
        for act in [Activation::Elu, Activation::Tanh, Activation::Relu] {
            let cfg = SurrogateConfig { hidden_dim: 4, n_gat_layers: 2, n_heads: 3, activation: act, seed: Some(5), ..Default::default() };
            let mut m = SurrogateModel::new(cfg, 3).unwrap();
            // Keep the MLP pre-activation off the ReLU kink at u = 0.
            let b1 = m.layout().b1;
            let mut p = m.params().to_vec();
            p[b1..b1 + 4].iter_mut().for_each(|v| *v = 0.05);
            m.set_params(&p).unwrap();
            let err = grad_check(&m, &sample(4, 3, 15, 0.7), 1e-5).unwrap();
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = SurrogateModel::new(small_config(5), 3).unwrap();
        m.train(&[sample(2, 3, 3, 0.2)], TrainMode::Finetune).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = (dir.path().join("s.bin"), dir.path().join("s.json"));
        m.save(&bin, &json).unwrap();
        let back = SurrogateModel::load(&bin, &json).unwrap();
        assert_eq!(back, m);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"GAT1");
        assert!(SurrogateModel::from_bytes(small_config(6), &bytes).is_err());
        assert!(SurrogateModel::from_bytes(small_config(5), &bytes[..bytes.len() - 1]).is_err());
    }
}
