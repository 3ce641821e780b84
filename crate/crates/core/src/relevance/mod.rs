//! Per-action feature relevance: IPS statistics, thresholds, masks and the
//! data-dependent deviation bounds behind them.

mod binning;
mod bounds;
mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use binning::{assign_bin, bin_count, make_bins, Binning, Stratifier};
pub use bounds::{bernstein_bound, truncation_bias_oracle, BoundMode, ContextModel, OracleMethod};
pub use stats::{
    contributions, ips_conditional_mean, ips_mean, mean_and_variance, pair_stats,
    pearson_avg_abs_corr, relevance_score, sample_variances, stratify, PairStats, Strata,
    VarianceSummary,
};

use crate::dataset::{FeatureKind, LoggedDataset};
use crate::error::{Error, Result};
use crate::util::json_digest;

/// Loss applied to stratum deviations in the relevance score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Abs,
    Squared,
}

impl Loss {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Loss::Abs => x.abs(),
            Loss::Squared => x * x,
        }
    }

    /// Lipschitz constant on `[-1, 1]`.
    pub fn lipschitz(self) -> f64 {
        match self {
            Loss::Abs => 1.0,
            Loss::Squared => 2.0,
        }
    }
}

/// Overrides for how strata are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Bin count for continuous features; `⌈n^{1/3}⌉` when `None`.
    pub bins: Option<usize>,
}

/// Everything the selection step needs, computed once per weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpsStats {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub loss: Loss,
    /// `M`: largest importance weight in the data.
    pub max_weight: f64,
    /// `R̂(a)`.
    pub marginal: Vec<f64>,
    /// `V_n(a)`.
    pub marginal_variance: Vec<f64>,
    /// `N(a)`.
    pub action_counts: Vec<usize>,
    pub stratifiers: Vec<Stratifier>,
    /// Indexed `[a][i]`.
    pub pairs: Vec<Vec<PairStats>>,
    /// `N(a, x_i)`, indexed `[a][i][stratum]`.
    pub action_stratum_counts: Vec<Vec<Vec<usize>>>,
    pub avg_abs_corr: Vec<f64>,
}

impl IpsStats {
    pub fn compute(
        ds: &LoggedDataset,
        weights: &[f64],
        loss: Loss,
        opts: StatsOptions,
    ) -> Result<Self> {
        let n = ds.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "relevance statistics need n >= 2, got {n}"
            )));
        }
        ips_mean(ds, 0, weights)?;
        let (k, d) = (ds.k(), ds.d());
        let stratifiers: Vec<Stratifier> = (0..d)
            .map(|i| match (ds.schema().kind(i), opts.bins) {
                (FeatureKind::Continuous, Some(s)) => Stratifier::Binned { bins: s.max(1) },
                (kind, _) => Stratifier::for_feature(kind, n),
            })
            .collect();
        let strata: Vec<Strata> = stratifiers
            .iter()
            .enumerate()
            .map(|(i, s)| stratify(ds, i, s))
            .collect();
        let per_action: Vec<_> = (0..k)
            .into_par_iter()
            .map(|a| {
                let u = contributions(ds, a, weights);
                let (mean, var) = mean_and_variance(&u);
                let pairs: Vec<PairStats> = strata
                    .iter()
                    .map(|s| pair_stats(&u, s, mean, loss))
                    .collect();
                let counts: Vec<Vec<usize>> = strata
                    .iter()
                    .map(|s| {
                        let mut c = vec![0usize; s.count];
                        for (r, &label) in ds.records().iter().zip(&s.labels) {
                            if r.action == a {
                                c[label] += 1;
                            }
                        }
                        c
                    })
                    .collect();
                (mean, var, pairs, counts)
            })
            .collect();
        let mut stats = IpsStats {
            n,
            k,
            d,
            loss,
            max_weight: weights.iter().copied().fold(0.0, f64::max),
            marginal: Vec::with_capacity(k),
            marginal_variance: Vec::with_capacity(k),
            action_counts: vec![0; k],
            stratifiers,
            pairs: Vec::with_capacity(k),
            action_stratum_counts: Vec::with_capacity(k),
            avg_abs_corr: pearson_avg_abs_corr(ds),
        };
        for r in ds.records() {
            stats.action_counts[r.action] += 1;
        }
        for (mean, var, pairs, counts) in per_action {
            stats.marginal.push(mean);
            stats.marginal_variance.push(var);
            stats.pairs.push(pairs);
            stats.action_stratum_counts.push(counts);
        }
        Ok(stats)
    }

    pub fn ghat(&self, a: usize, i: usize) -> f64 {
        self.pairs[a][i].ghat
    }

    /// Strata with no records, summed over every (action, feature) pair.
    pub fn empty_strata(&self) -> usize {
        self.pairs.iter().flatten().map(|p| p.empty_strata).sum()
    }

    pub fn threshold_mode(&self, i: usize) -> ThresholdMode {
        match self.stratifiers[i] {
            Stratifier::Categorical { cardinality } => ThresholdMode::Categorical { b: cardinality },
            Stratifier::Binned { .. } => ThresholdMode::Binned,
        }
    }

    pub fn threshold(&self, a: usize, i: usize, lambda1: f64, lambda2: f64) -> f64 {
        threshold(
            self.pairs[a][i].vbar,
            self.n,
            self.avg_abs_corr[i],
            lambda1,
            lambda2,
            self.threshold_mode(i),
        )
    }

    /// Empirical Bernstein bound on `|Ĝ(a,i) − g(a,i)|` at confidence `1 − 3δ`.
    pub fn bound(&self, a: usize, i: usize, delta: f64, mode: BoundMode) -> Result<f64> {
        bernstein_bound(
            self.n,
            self.stratifiers[i].strata(),
            self.pairs[a][i].vbar,
            self.marginal_variance[a],
            self.max_weight,
            delta,
            self.loss.lipschitz(),
            mode,
        )
    }

    pub fn select(&self, lambda1: f64, lambda2: f64) -> Result<(RelevanceReport, FeatureMasks)> {
        select_features(self, lambda1, lambda2)
    }

    fn report_mode(&self) -> ReportMode {
        let bins = self.stratifiers.iter().find_map(|s| match s {
            Stratifier::Binned { bins } => Some(*bins),
            _ => None,
        });
        let any_categorical = self
            .stratifiers
            .iter()
            .any(|s| matches!(s, Stratifier::Categorical { .. }));
        match (bins, any_categorical) {
            (None, _) => ReportMode::Categorical,
            (Some(s), false) => ReportMode::Binned { s },
            (Some(s), true) => ReportMode::Mixed { s },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdMode {
    Categorical { b: usize },
    Binned,
}

/// `λ1·√(b·V̄/n) + λ2·corr` (categorical) or `λ1·n^{-1/3}·√V̄ + λ2·corr` (binned).
pub fn threshold(
    vbar: f64,
    n: usize,
    avg_abs_corr: f64,
    lambda1: f64,
    lambda2: f64,
    mode: ThresholdMode,
) -> f64 {
    let n = n as f64;
    let spread = match mode {
        ThresholdMode::Categorical { b } => (b as f64 * vbar / n).sqrt(),
        ThresholdMode::Binned => n.powf(-1.0 / 3.0) * vbar.sqrt(),
    };
    lambda1 * spread + lambda2 * avg_abs_corr
}

/// Per-action binary masks over feature types.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMasks {
    masks: Vec<Vec<bool>>,
}

impl FeatureMasks {
    pub fn new(masks: Vec<Vec<bool>>) -> Result<Self> {
        let d = masks.first().map_or(0, Vec::len);
        if masks.is_empty() || d == 0 || masks.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument(
                "masks must be a non-empty k x d matrix".into(),
            ));
        }
        Ok(FeatureMasks { masks })
    }

    /// Every feature for every action.
    pub fn all(k: usize, d: usize) -> Self {
        FeatureMasks {
            masks: vec![vec![true; d]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn d(&self) -> usize {
        self.masks[0].len()
    }

    pub fn action(&self, a: usize) -> &[bool] {
        &self.masks[a]
    }

    pub fn is_selected(&self, a: usize, i: usize) -> bool {
        self.masks[a][i]
    }

    pub fn selected(&self, a: usize) -> Vec<usize> {
        (0..self.d()).filter(|&i| self.masks[a][i]).collect()
    }

    pub fn count(&self) -> usize {
        self.masks.iter().flatten().filter(|&&b| b).count()
    }

    pub fn digest(&self) -> String {
        json_digest(&self.masks)
    }

    pub fn as_rows(&self) -> &[Vec<bool>] {
        &self.masks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportMode {
    Categorical,
    Binned { s: usize },
    /// Categorical and binned feature types side by side.
    Mixed { s: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub index: usize,
    pub ghat: f64,
    pub tau: f64,
    pub vbar: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub action: usize,
    /// Set when nothing cleared its threshold and the top-`Ĝ` feature was kept.
    pub fallback: bool,
    pub features: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mode: ReportMode,
    pub loss: Loss,
    pub per_action: Vec<ActionEntry>,
    pub avg_abs_corr: Vec<f64>,
    pub empty_strata: usize,
}

impl RelevanceReport {
    pub fn masks(&self) -> FeatureMasks {
        FeatureMasks {
            masks: self
                .per_action
                .iter()
                .map(|a| a.features.iter().map(|f| f.selected).collect())
                .collect(),
        }
    }
}

/// `selected(a,i) ⇔ Ĝ(a,i) > τ(a,i)`, keeping at least one feature per action.
pub fn select_features(
    stats: &IpsStats,
    lambda1: f64,
    lambda2: f64,
) -> Result<(RelevanceReport, FeatureMasks)> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda1 and lambda2 must be >= 0, got {lambda1} and {lambda2}"
        )));
    }
    let per_action: Vec<ActionEntry> = (0..stats.k)
        .map(|a| {
            let mut features: Vec<FeatureEntry> = (0..stats.d)
                .map(|i| {
                    let p = &stats.pairs[a][i];
                    let tau = stats.threshold(a, i, lambda1, lambda2);
                    FeatureEntry {
                        index: i,
                        ghat: p.ghat,
                        tau,
                        vbar: p.vbar,
                        selected: p.ghat > tau,
                    }
                })
                .collect();
            let fallback = !features.iter().any(|f| f.selected);
            if fallback {
                let best = crate::util::argmax(
                    &features.iter().map(|f| f.ghat).collect::<Vec<_>>(),
                );
                features[best].selected = true;
            }
            ActionEntry {
                action: a,
                fallback,
                features,
            }
        })
        .collect();
    let report = RelevanceReport {
        lambda1,
        lambda2,
        mode: stats.report_mode(),
        loss: stats.loss,
        per_action,
        avg_abs_corr: stats.avg_abs_corr.clone(),
        empty_strata: stats.empty_strata(),
    };
    let masks = report.masks();
    Ok((report, masks))
}
