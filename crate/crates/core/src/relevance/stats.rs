//! IPS estimates of marginal and stratum-conditional rewards, their sample
//! variances, and the relevance score built from them.

use serde::{Deserialize, Serialize};

use super::binning::Stratifier;
use super::Loss;
use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};

/// Per-record stratum labels for one feature type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strata {
    pub labels: Vec<usize>,
    pub count: usize,
}

pub fn stratify(ds: &LoggedDataset, i: usize, stratifier: &Stratifier) -> Strata {
    Strata {
        labels: ds
            .records()
            .iter()
            .map(|r| stratifier.assign(r.x[i]))
            .collect(),
        count: stratifier.strata(),
    }
}

fn check_weights(ds: &LoggedDataset, weights: &[f64]) -> Result<()> {
    if weights.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} records",
            weights.len(),
            ds.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "importance weights must be positive and finite, got {w}"
        )));
    }
    Ok(())
}

/// `U_j = w_j · 1{A_j = a} · r_j`.
pub fn contributions(ds: &LoggedDataset, a: usize, weights: &[f64]) -> Vec<f64> {
    ds.records()
        .iter()
        .zip(weights)
        .map(|(r, w)| if r.action == a { w * r.reward } else { 0.0 })
        .collect()
}

/// `(1/n) Σ_j w_j 1{A_j = a} r_j`; with capped weights this is the truncated estimator.
pub fn ips_mean(ds: &LoggedDataset, a: usize, weights: &[f64]) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_weights(ds, weights)?;
    Ok(contributions(ds, a, weights).iter().sum::<f64>() / ds.len() as f64)
}

/// IPS mean over records whose feature `i` falls in `stratum`. An empty
/// stratum yields 0.
pub fn ips_conditional_mean(
    ds: &LoggedDataset,
    a: usize,
    i: usize,
    stratum: usize,
    weights: &[f64],
    stratifier: &Stratifier,
) -> Result<f64> {
    check_weights(ds, weights)?;
    let strata = stratify(ds, i, stratifier);
    let u = contributions(ds, a, weights);
    let (mut sum, mut count) = (0.0, 0usize);
    for (uj, s) in u.iter().zip(&strata.labels) {
        if *s == stratum {
            sum += uj;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Statistics of `U` for one (action, feature type) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub ghat: f64,
    /// Count-weighted average of the per-stratum sample variances.
    pub vbar: f64,
    pub counts: Vec<usize>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub empty_strata: usize,
}

/// Mean and unbiased sample variance (two-pass).
pub fn mean_and_variance(u: &[f64]) -> (f64, f64) {
    let n = u.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = u.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = u.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

/// Builds [`PairStats`] from precomputed contributions and strata. `overall_mean`
/// is the marginal IPS estimate the stratum means are compared against.
pub fn pair_stats(u: &[f64], strata: &Strata, overall_mean: f64, loss: Loss) -> PairStats {
    let n = u.len();
    let b = strata.count;
    let mut counts = vec![0usize; b];
    let mut sums = vec![0.0; b];
    for (uj, &s) in u.iter().zip(&strata.labels) {
        counts[s] += 1;
        sums[s] += uj;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let mut ss = vec![0.0; b];
    for (uj, &s) in u.iter().zip(&strata.labels) {
        let dev = uj - means[s];
        ss[s] += dev * dev;
    }
    let variances: Vec<f64> = ss
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c < 2 { 0.0 } else { s / (c - 1) as f64 })
        .collect();
    let nf = n as f64;
    let mut ghat = 0.0;
    let mut vbar = 0.0;
    for s in 0..b {
        if counts[s] == 0 {
            continue;
        }
        let frac = counts[s] as f64 / nf;
        ghat += frac * loss.apply(means[s] - overall_mean);
        vbar += frac * variances[s];
    }
    PairStats {
        ghat,
        vbar,
        empty_strata: counts.iter().filter(|&&c| c == 0).count(),
        counts,
        means,
        variances,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSummary {
    pub overall: f64,
    pub weighted: f64,
    pub per_stratum: Vec<f64>,
}

pub fn sample_variances(
    ds: &LoggedDataset,
    a: usize,
    i: usize,
    weights: &[f64],
    stratifier: &Stratifier,
) -> Result<VarianceSummary> {
    if ds.len() < 2 {
        return Err(Error::InvalidArgument("sample variance needs n >= 2".into()));
    }
    check_weights(ds, weights)?;
    let u = contributions(ds, a, weights);
    let (mean, overall) = mean_and_variance(&u);
    let stats = pair_stats(&u, &stratify(ds, i, stratifier), mean, Loss::Abs);
    Ok(VarianceSummary {
        overall,
        weighted: stats.vbar,
        per_stratum: stats.variances,
    })
}

/// `Σ_strata (N(x_i)/n) · ℓ(R̂(a, x_i) − R̂(a))`.
pub fn relevance_score(
    ds: &LoggedDataset,
    a: usize,
    i: usize,
    weights: &[f64],
    loss: Loss,
    stratifier: &Stratifier,
) -> Result<f64> {
    let mean = ips_mean(ds, a, weights)?;
    let u = contributions(ds, a, weights);
    Ok(pair_stats(&u, &stratify(ds, i, stratifier), mean, loss).ghat)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// For each feature type, the mean absolute Pearson correlation with every
/// other type. Constant columns correlate 0 with everything.
pub fn pearson_avg_abs_corr(ds: &LoggedDataset) -> Vec<f64> {
    let d = ds.d();
    if d < 2 || ds.len() < 2 {
        return vec![0.0; d];
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|i| ds.column(i)).collect();
    let mut abs = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i + 1..d {
            let r = pearson(&cols[i], &cols[j]).abs();
            abs[i][j] = r;
            abs[j][i] = r;
        }
    }
    abs.iter()
        .map(|row| row.iter().sum::<f64>() / (d - 1) as f64)
        .collect()
}
