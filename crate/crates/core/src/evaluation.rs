//! Accuracy against counterfactual reward tables and run-level summaries.

use serde::{Deserialize, Serialize};

use crate::dataset::{HiddenRewards, LoggingPolicy, SupervisedDataset};
use crate::error::{Error, Result};
use crate::policy::PolicyNetwork;

/// Anything that maps a context to a distribution over actions.
pub trait ActionPolicy {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl ActionPolicy for PolicyNetwork {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

impl ActionPolicy for LoggingPolicy {
    fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.probabilities(x))
    }
}

/// Always `probs`, whatever the context.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPolicy(pub Vec<f64>);

impl ActionPolicy for FixedPolicy {
    fn action_probs(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// `(1/N) Σ_j Σ_a h(a|X_j)·R_j(a)`.
pub fn accuracy<P: ActionPolicy + ?Sized>(
    policy: &P,
    contexts: &[Vec<f64>],
    rewards: Option<&HiddenRewards>,
) -> Result<f64> {
    let rewards = rewards
        .ok_or_else(|| Error::MissingRewards("accuracy needs the full reward table".into()))?;
    if contexts.len() != rewards.len() {
        return Err(Error::InvalidArgument(format!(
            "{} contexts but {} reward rows",
            contexts.len(),
            rewards.len()
        )));
    }
    if contexts.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let mut total = 0.0;
    for (x, row) in contexts.iter().zip(&rewards.rewards) {
        let h = policy.action_probs(x)?;
        if h.len() != row.len() {
            return Err(Error::InvalidArgument("policy and reward table disagree on k".into()));
        }
        total += h.iter().zip(row).map(|(p, r)| p * r).sum::<f64>();
    }
    Ok(total / contexts.len() as f64)
}

/// Accuracy on a supervised test split.
pub fn accuracy_on<P: ActionPolicy + ?Sized>(policy: &P, test: &SupervisedDataset) -> Result<f64> {
    let contexts: Vec<Vec<f64>> = test.rows().iter().map(|(x, _)| x.clone()).collect();
    accuracy(policy, &contexts, Some(&HiddenRewards::from_supervised(test)))
}

/// Share of the possible accuracy gain over `acc_other` that `acc_ours` realizes.
pub fn improvement_score(acc_ours: f64, acc_other: f64) -> Result<f64> {
    if acc_other >= 1.0 {
        return Err(Error::InvalidArgument(
            "improvement is undefined against a perfect baseline".into(),
        ));
    }
    Ok((acc_ours - acc_other) / (1.0 - acc_other))
}

/// Mean and normal-approximation 95% half-width `1.96·s/√n`.
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a confidence interval needs at least 2 runs, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub algorithm: String,
    pub acc: f64,
    pub ci95: f64,
    pub runs: usize,
    /// `(baseline, improvement)` pairs.
    pub improvement: Vec<(String, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(labels: &[usize], k: usize) -> HiddenRewards {
        HiddenRewards {
            rewards: labels
                .iter()
                .map(|&l| (0..k).map(|a| f64::from(u8::from(a == l))).collect())
                .collect(),
        }
    }

    struct Oracle(Vec<usize>);

    impl ActionPolicy for Oracle {
        fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
            let mut h = vec![0.0; 3];
            h[self.0[x[0] as usize]] = 1.0;
            Ok(h)
        }
    }

    #[test]
    fn perfect_and_uniform_policies() {
        let labels = vec![0, 2, 1, 1];
        let xs: Vec<Vec<f64>> = (0..4).map(|j| vec![j as f64]).collect();
        let table = one_hot(&labels, 3);
        assert_eq!(accuracy(&Oracle(labels.clone()), &xs, Some(&table)).unwrap(), 1.0);
        let uniform = FixedPolicy(vec![0.1; 10]);
        let table10 = one_hot(&labels, 10);
        assert!((accuracy(&uniform, &xs, Some(&table10)).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(accuracy(&uniform, &xs, None), Err(Error::MissingRewards(_))));
    }

    #[test]
    fn improvement_cases() {
        // Inputs are rounded to four places, which moves the ratio by up to ~3e-4.
        assert!((improvement_score(0.8801, 0.6898).unwrap() - 0.6134).abs() < 5e-4);
        assert_eq!(improvement_score(0.4, 0.4).unwrap(), 0.0);
        assert!((improvement_score(0.5, 0.75).unwrap() + 1.0).abs() < 1e-15);
        assert!(improvement_score(0.9, 1.0).is_err());
    }

    #[test]
    fn ci_cases() {
        assert_eq!(ci95(&[0.3, 0.3, 0.3]).unwrap(), (0.3, 0.0));
        assert!(ci95(&[0.3]).is_err());
        let v: Vec<f64> = (0..50).map(|j| (j % 2) as f64).collect();
        let (m, h) = ci95(&v).unwrap();
        let sd = (50.0 * 0.25 / 49.0f64).sqrt();
        assert_eq!(m, 0.5);
        assert!((h - 1.96 * sd / 50f64.sqrt()).abs() < 1e-15);
    }
}
