//! Multinomial-logistic model of the logging policy and (truncated)
//! importance weights.

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureSchema, LoggedDataset};
use crate::error::{Error, Result};
use crate::util::{json_digest, softmax_into};

/// `p̂(a|x) = exp(β_aᵀx) / Σ_a' exp(β_a'ᵀx)`. The last action's coefficients
/// are pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub k: usize,
    pub d: usize,
    pub beta: Vec<Vec<f64>>,
    pub schema_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub l2: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            l2: 1e-4,
            max_iters: 2000,
            tol: 1e-6,
        }
    }
}

/// Objective values of accepted iterations, plus the final gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_max_norm: f64,
}

pub fn schema_digest(schema: &FeatureSchema, k: usize) -> String {
    json_digest(&(schema, k))
}

fn scores_into(beta: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    for (s, b) in out.iter_mut().zip(beta) {
        *s = b.iter().zip(x).map(|(u, v)| u * v).sum();
    }
}

/// Mean log-likelihood of the logged actions minus `l2/2 · ||β||²`.
pub fn penalized_log_likelihood(ds: &LoggedDataset, beta: &[Vec<f64>], l2: f64) -> f64 {
    let k = ds.k();
    let mut scores = vec![0.0; k];
    let mut total = 0.0;
    for r in ds.records() {
        scores_into(beta, &r.x, &mut scores);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += scores[r.action] - lse;
    }
    let penalty: f64 = beta.iter().flatten().map(|b| b * b).sum();
    total / ds.len() as f64 - 0.5 * l2 * penalty
}

/// Analytic gradient of [`penalized_log_likelihood`]. The pinned last row
/// has zero gradient.
pub fn log_likelihood_gradient(ds: &LoggedDataset, beta: &[Vec<f64>], l2: f64) -> Vec<Vec<f64>> {
    let (k, d) = (ds.k(), ds.d());
    let n = ds.len() as f64;
    let mut grad = vec![vec![0.0; d]; k];
    let mut scores = vec![0.0; k];
    let mut probs = vec![0.0; k];
    for r in ds.records() {
        scores_into(beta, &r.x, &mut scores);
        softmax_into(&scores, &mut probs);
        for a in 0..k - 1 {
            let coef = if a == r.action { 1.0 } else { 0.0 } - probs[a];
            for (g, x) in grad[a].iter_mut().zip(&r.x) {
                *g += coef * x;
            }
        }
    }
    for a in 0..k - 1 {
        for (g, b) in grad[a].iter_mut().zip(&beta[a]) {
            *g = *g / n - l2 * b;
        }
    }
    grad
}

fn max_abs(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Full-batch gradient ascent with backtracking (Armijo) line search.
pub fn fit_traced(ds: &LoggedDataset, opts: &FitOptions) -> Result<(PropensityModel, FitTrace)> {
    let (k, d) = (ds.k(), ds.d());
    if ds.len() < k {
        return Err(Error::InvalidArgument(format!(
            "propensity fit needs at least k = {k} records, got {}",
            ds.len()
        )));
    }
    if opts.l2 < 0.0 {
        return Err(Error::InvalidArgument("l2 must be >= 0".into()));
    }
    let overflow = || {
        Error::NonFinite("propensity log-likelihood overflowed; normalize features to [0, 1]".into())
    };
    let mut beta = vec![vec![0.0; d]; k];
    let mut objective = penalized_log_likelihood(ds, &beta, opts.l2);
    if !objective.is_finite() {
        return Err(overflow());
    }
    let mut trace = FitTrace {
        objective: vec![objective],
        iterations: 0,
        converged: false,
        grad_max_norm: f64::INFINITY,
    };
    let mut step = 1.0;
    let mut candidate = beta.clone();
    for iter in 0..opts.max_iters {
        let grad = log_likelihood_gradient(ds, &beta, opts.l2);
        let gmax = max_abs(&grad);
        trace.grad_max_norm = gmax;
        trace.iterations = iter;
        if gmax < opts.tol {
            trace.converged = true;
            break;
        }
        let gsq: f64 = grad.iter().flatten().map(|g| g * g).sum();
        let mut accepted = false;
        while step > 1e-12 {
            for a in 0..k {
                for i in 0..d {
                    candidate[a][i] = beta[a][i] + step * grad[a][i];
                }
            }
            let value = penalized_log_likelihood(ds, &candidate, opts.l2);
            if !value.is_finite() {
                step *= 0.5;
                continue;
            }
            if value >= objective + 1e-4 * step * gsq {
                std::mem::swap(&mut beta, &mut candidate);
                objective = value;
                trace.objective.push(value);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No ascent direction left at machine precision.
            trace.converged = true;
            break;
        }
        step = (step * 2.0).min(1e6);
        trace.iterations = iter + 1;
    }
    if !objective.is_finite() || beta.iter().flatten().any(|b| !b.is_finite()) {
        return Err(overflow());
    }
    let model = PropensityModel {
        k,
        d,
        beta,
        schema_digest: schema_digest(ds.schema(), k),
    };
    Ok((model, trace))
}

pub fn fit(ds: &LoggedDataset, opts: &FitOptions) -> Result<PropensityModel> {
    fit_traced(ds, opts).map(|(m, _)| m)
}

impl PropensityModel {
    /// Predicted action distribution at `x`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; self.k];
        scores_into(&self.beta, x, &mut scores);
        let mut probs = vec![0.0; self.k];
        softmax_into(&scores, &mut probs);
        probs
    }

    /// `p̂(A_j | X_j)` for every record.
    pub fn logged_propensities(&self, ds: &LoggedDataset) -> Result<Vec<f64>> {
        if ds.d() != self.d || ds.k() != self.k {
            return Err(Error::InvalidArgument(format!(
                "model is {}x{} but dataset is {}x{}",
                self.k,
                self.d,
                ds.k(),
                ds.d()
            )));
        }
        Ok(ds
            .records()
            .iter()
            .map(|r| self.predict(&r.x)[r.action])
            .collect())
    }
}

/// Truncation level for importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCap(f64);

impl WeightCap {
    pub fn new(m: f64) -> Result<Self> {
        if m > 1.0 && !m.is_nan() {
            Ok(WeightCap(m))
        } else {
            Err(Error::InvalidArgument(format!("truncation level must be > 1, got {m}")))
        }
    }

    /// `m = √n`.
    pub fn for_sample_size(n: usize) -> Result<Self> {
        Self::new((n as f64).sqrt())
    }

    pub fn m(self) -> f64 {
        self.0
    }
}

/// `1/p`, or `min(1/p, m)` under a cap.
pub fn importance_weight(p: f64, cap: Option<WeightCap>) -> Result<f64> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::NonPositivePropensity(p));
    }
    let w = 1.0 / p;
    Ok(match cap {
        Some(c) => w.min(c.m()),
        None => w,
    })
}

pub fn importance_weights(propensities: &[f64], cap: Option<WeightCap>) -> Result<Vec<f64>> {
    propensities
        .iter()
        .map(|&p| importance_weight(p, cap))
        .collect()
}
