//! Typestate wrapper enforcing the order propensities → relevance → policy.

use crate::dataset::LoggedDataset;
use crate::error::{Error, Result};
use crate::policy::{self, PolicyArchitecture, PolicyNetwork, TrainConfig, TrainSummary};
use crate::propensity::{self, importance_weights, FitOptions, PropensityModel, WeightCap};
use crate::relevance::{FeatureMasks, IpsStats, Loss, RelevanceReport, StatsOptions};

use super::config::{CapKeyword, CapSpec, PropensityMode};

/// Logged train and validation splits, nothing derived yet.
#[derive(Debug, Clone)]
pub struct Logged;

/// Importance weights for both splits.
#[derive(Debug, Clone)]
pub struct Weighted {
    pub model: Option<PropensityModel>,
    pub cap: Option<WeightCap>,
    pub train_weights: Vec<f64>,
    pub validation_weights: Vec<f64>,
}

/// Relevance statistics on the training split.
#[derive(Debug, Clone)]
pub struct Analyzed {
    pub weighted: Weighted,
    pub stats: IpsStats,
}

#[derive(Debug, Clone)]
pub struct Pipeline<S> {
    train: LoggedDataset,
    validation: LoggedDataset,
    state: S,
}

impl<S> Pipeline<S> {
    pub fn train_set(&self) -> &LoggedDataset {
        &self.train
    }

    pub fn validation_set(&self) -> &LoggedDataset {
        &self.validation
    }

    pub fn state(&self) -> &S {
        &self.state
    }
}

fn resolve_cap(spec: CapSpec, mode: PropensityMode, n: usize) -> Result<Option<WeightCap>> {
    match spec {
        CapSpec::Fixed(m) => WeightCap::new(m).map(Some),
        CapSpec::Keyword(CapKeyword::None) => Ok(None),
        CapSpec::Keyword(CapKeyword::Auto) => match mode {
            PropensityMode::True => Ok(None),
            PropensityMode::Estimated if n >= 2 => WeightCap::for_sample_size(n).map(Some),
            PropensityMode::Estimated => Ok(None),
        },
    }
}

impl Pipeline<Logged> {
    pub fn new(train: LoggedDataset, validation: LoggedDataset) -> Result<Self> {
        if train.d() != validation.d() || train.k() != validation.k() {
            return Err(Error::InvalidArgument(
                "train and validation splits have different shapes".into(),
            ));
        }
        Ok(Pipeline {
            train,
            validation,
            state: Logged,
        })
    }

    /// Step A: importance weights from the recorded propensities or from a
    /// multinomial-logistic fit on the training split.
    pub fn weigh(self, mode: PropensityMode, fit: &FitOptions, cap: CapSpec) -> Result<Pipeline<Weighted>> {
        let cap = resolve_cap(cap, mode, self.train.len())?;
        let (model, p_train, p_val) = match mode {
            PropensityMode::True => {
                let missing =
                    || Error::InvalidArgument("true propensities requested but not recorded".into());
                let pt = self.train.true_propensities().ok_or_else(missing)?;
                let pv = if self.validation.is_empty() {
                    Vec::new()
                } else {
                    self.validation.true_propensities().ok_or_else(missing)?
                };
                (None, pt, pv)
            }
            PropensityMode::Estimated => {
                let model = propensity::fit(&self.train, fit)?;
                let pt = model.logged_propensities(&self.train)?;
                let pv = model.logged_propensities(&self.validation)?;
                (Some(model), pt, pv)
            }
        };
        Ok(Pipeline {
            state: Weighted {
                model,
                cap,
                train_weights: importance_weights(&p_train, cap)?,
                validation_weights: importance_weights(&p_val, cap)?,
            },
            train: self.train,
            validation: self.validation,
        })
    }
}

impl Pipeline<Weighted> {
    /// Step B statistics.
    pub fn analyze(self, loss: Loss, opts: StatsOptions) -> Result<Pipeline<Analyzed>> {
        let stats = IpsStats::compute(&self.train, &self.state.train_weights, loss, opts)?;
        Ok(Pipeline {
            state: Analyzed {
                weighted: self.state,
                stats,
            },
            train: self.train,
            validation: self.validation,
        })
    }
}

impl Pipeline<Analyzed> {
    pub fn weighted(&self) -> &Weighted {
        &self.state.weighted
    }

    pub fn stats(&self) -> &IpsStats {
        &self.state.stats
    }

    pub fn select(&self, lambda1: f64, lambda2: f64) -> Result<(RelevanceReport, FeatureMasks)> {
        self.state.stats.select(lambda1, lambda2)
    }

    /// Step C.
    pub fn train_policy(
        &self,
        arch: PolicyArchitecture,
        cfg: &TrainConfig,
    ) -> Result<(PolicyNetwork, TrainSummary)> {
        let w = &self.state.weighted;
        policy::train(
            arch,
            &self.train,
            &w.train_weights,
            &self.validation,
            &w.validation_weights,
            cfg,
        )
    }

    pub fn validation_loss(&self, net: &PolicyNetwork) -> Result<f64> {
        policy::validation_loss(net, &self.validation, &self.state.weighted.validation_weights)
    }
}
