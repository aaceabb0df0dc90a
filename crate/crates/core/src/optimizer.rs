//! Direct optimization of a query embedding against decomposed sub-query embeddings.
//!
//! The objective over the learnable embedding `u` is
//!
//! ```text
//! L(u) = λp · mean_i ||u - p_i||²  -  λn · mean_j ||u - n_j||²  +  λo · ||u - o||²
//! ```
//!
//! where `o` is the original query embedding and `p_i` / `n_j` the positive and
//! negative sub-query embeddings. An empty positive or negative set drops its term.
//! `u` starts at `o` and is updated with Adam for a fixed number of steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{check_dim, l2_normalize, mean, squared_euclidean, EmbeddingVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub lambda_p: f64,
    pub lambda_n: f64,
    pub lambda_o: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub normalize_inputs: bool,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self::text()
    }
}

impl OptimizationConfig {
    /// Text retrieval weights: λp = 1, λn = 1, λo = 0.2, 20 steps.
    pub fn text() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_n: 1.0,
            lambda_o: 0.2,
            steps: 20,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            normalize_inputs: true,
        }
    }

    /// Text-to-image weights: the consistency term is raised to λo = 1.
    pub fn multimodal() -> Self {
        Self {
            lambda_o: 1.0,
            ..Self::text()
        }
    }

    pub fn with_lambdas(mut self, lambda_p: f64, lambda_n: f64, lambda_o: f64) -> Self {
        self.lambda_p = lambda_p;
        self.lambda_n = lambda_n;
        self.lambda_o = lambda_o;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    /// Zero steps is accepted and means "return the initialization".
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if [self.lambda_p, self.lambda_n, self.lambda_o].iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambda weights must be finite and non-negative");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        Ok(())
    }
}

/// Embeddings of the original query and its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEmbeddings {
    pub original: EmbeddingVector,
    pub positives: Vec<EmbeddingVector>,
    pub negatives: Vec<EmbeddingVector>,
}

impl DecompositionEmbeddings {
    pub fn new(original: EmbeddingVector, positives: Vec<EmbeddingVector>, negatives: Vec<EmbeddingVector>) -> Result<Self> {
        let d = original.dim();
        for v in positives.iter().chain(&negatives) {
            check_dim(d, v.dim())?;
        }
        Ok(Self {
            original,
            positives,
            negatives,
        })
    }

    pub fn dim(&self) -> usize {
        self.original.dim()
    }

    /// Copy with every vector projected onto the unit sphere.
    pub fn normalized(&self) -> Result<Self> {
        let norm_all = |vs: &[EmbeddingVector]| vs.iter().map(|v| l2_normalize(v)).collect::<Result<Vec<_>>>();
        Ok(Self {
            original: l2_normalize(&self.original)?,
            positives: norm_all(&self.positives)?,
            negatives: norm_all(&self.negatives)?,
        })
    }

    fn check(&self, e_u: &[f64]) -> Result<()> {
        check_dim(self.dim(), e_u.len())?;
        for v in self.positives.iter().chain(&self.negatives) {
            check_dim(self.dim(), v.dim())?;
        }
        Ok(())
    }

    /// Curvature coefficient `c`; the Hessian of the objective is `2c·I`.
    pub fn curvature(&self, cfg: &OptimizationConfig) -> f64 {
        let mut c = cfg.lambda_o;
        if !self.positives.is_empty() {
            c += cfg.lambda_p;
        }
        if !self.negatives.is_empty() {
            c -= cfg.lambda_n;
        }
        c
    }
}

fn mean_sq_dist(e_u: &[f64], set: &[EmbeddingVector]) -> Result<f64> {
    let mut total = 0.0;
    for v in set {
        total += squared_euclidean(e_u, v)?;
    }
    Ok(total / set.len() as f64)
}

pub fn deo_loss(e_u: &[f64], inputs: &DecompositionEmbeddings, cfg: &OptimizationConfig) -> Result<f64> {
    inputs.check(e_u)?;
    let mut loss = cfg.lambda_o * squared_euclidean(e_u, &inputs.original)?;
    if !inputs.positives.is_empty() {
        loss += cfg.lambda_p * mean_sq_dist(e_u, &inputs.positives)?;
    }
    if !inputs.negatives.is_empty() {
        loss -= cfg.lambda_n * mean_sq_dist(e_u, &inputs.negatives)?;
    }
    Ok(loss)
}

/// Precomputed sub-query centroids; the gradient only depends on these.
struct Centroids {
    positive: Option<EmbeddingVector>,
    negative: Option<EmbeddingVector>,
}

impl Centroids {
    fn of(inputs: &DecompositionEmbeddings) -> Result<Self> {
        let opt_mean = |vs: &[EmbeddingVector]| if vs.is_empty() { Ok(None) } else { mean(vs).map(Some) };
        Ok(Self {
            positive: opt_mean(&inputs.positives)?,
            negative: opt_mean(&inputs.negatives)?,
        })
    }

    fn gradient_into(&self, e_u: &[f64], original: &[f64], cfg: &OptimizationConfig, out: &mut [f64]) {
        for (k, g) in out.iter_mut().enumerate() {
            let u = e_u[k];
            let mut acc = 2.0 * cfg.lambda_o * (u - original[k]);
            if let Some(p) = &self.positive {
                acc += 2.0 * cfg.lambda_p * (u - p[k]);
            }
            if let Some(n) = &self.negative {
                acc -= 2.0 * cfg.lambda_n * (u - n[k]);
            }
            *g = acc;
        }
    }
}

pub fn deo_gradient(e_u: &[f64], inputs: &DecompositionEmbeddings, cfg: &OptimizationConfig) -> Result<EmbeddingVector> {
    inputs.check(e_u)?;
    let centroids = Centroids::of(inputs)?;
    let mut grad = vec![0.0; e_u.len()];
    centroids.gradient_into(e_u, &inputs.original, cfg, &mut grad);
    EmbeddingVector::new(grad)
}

/// The unique stationary point of the objective when its curvature is positive.
pub fn closed_form_optimum(inputs: &DecompositionEmbeddings, cfg: &OptimizationConfig) -> Result<EmbeddingVector> {
    let c = inputs.curvature(cfg);
    if c <= 0.0 {
        return Err(Error::NotStronglyConvex(c));
    }
    let centroids = Centroids::of(inputs)?;
    let mut out: Vec<f64> = inputs.original.iter().map(|x| cfg.lambda_o * x).collect();
    if let Some(p) = &centroids.positive {
        out.iter_mut().zip(p.iter()).for_each(|(o, x)| *o += cfg.lambda_p * x);
    }
    if let Some(n) = &centroids.negative {
        out.iter_mut().zip(n.iter()).for_each(|(o, x)| *o -= cfg.lambda_n * x);
    }
    out.iter_mut().for_each(|o| *o /= c);
    EmbeddingVector::new(out)
}

/// Per-step record of the optimized embedding; index 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub snapshots: Vec<EmbeddingVector>,
    pub losses: Vec<f64>,
}

impl OptimizationTrace {
    pub fn steps(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }

    pub fn initial(&self) -> &EmbeddingVector {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &EmbeddingVector {
        self.snapshots.last().expect("trace always holds the initialization")
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            let denom = v_hat.sqrt() + self.eps;
            // a coordinate with no gradient history does not move (matters when eps = 0)
            if denom > 0.0 {
                params[k] -= self.lr * m_hat / denom;
            }
        }
    }
}

/// Runs `cfg.steps` Adam updates starting from the original embedding.
///
/// With `normalize_inputs` set, every input vector is unit-normalized first and the
/// trace starts at the normalized original. The result is not re-normalized.
pub fn optimize_query_embedding(
    inputs: &DecompositionEmbeddings,
    cfg: &OptimizationConfig,
) -> Result<(EmbeddingVector, OptimizationTrace)> {
    cfg.validate()?;
    let prepared;
    let inputs = if cfg.normalize_inputs {
        prepared = inputs.normalized()?;
        &prepared
    } else {
        inputs.check(&inputs.original)?;
        inputs
    };
    if inputs.curvature(cfg) <= 0.0 {
        log::warn!(
            "objective has non-positive curvature {:.3} (λp={}, λn={}, λo={}); running {} steps anyway",
            inputs.curvature(cfg),
            cfg.lambda_p,
            cfg.lambda_n,
            cfg.lambda_o,
            cfg.steps
        );
    }

    let centroids = Centroids::of(inputs)?;
    let mut e_u = inputs.original.to_vec();
    let mut grad = vec![0.0; e_u.len()];
    let mut adam = Adam::new(e_u.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    let mut snapshots = Vec::with_capacity(cfg.steps + 1);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    snapshots.push(inputs.original.clone());
    losses.push(deo_loss(&e_u, inputs, cfg)?);

    let idle = inputs.positives.is_empty() && inputs.negatives.is_empty();
    for _ in 0..cfg.steps {
        if !idle {
            centroids.gradient_into(&e_u, &inputs.original, cfg, &mut grad);
            adam.step(&mut e_u, &grad);
        }
        let snapshot = EmbeddingVector::new(e_u.clone())?;
        losses.push(deo_loss(&snapshot, inputs, cfg)?);
        snapshots.push(snapshot);
    }

    let final_embedding = snapshots.last().cloned().expect("non-empty trace");
    Ok((final_embedding, OptimizationTrace { snapshots, losses }))
}
