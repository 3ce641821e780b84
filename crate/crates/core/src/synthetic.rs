//! Synthetic logged-bandit generators with closed-form ground truth.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::dataset::{
    FeatureKind, FeatureSchema, HiddenRewards, LoggedDataset, LoggedRecord, PropensitySource,
};
use crate::error::{Error, Result};
use crate::relevance::{ContextModel, Loss};
use crate::util::{seeded_rng, softmax, Rng};

fn draw_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return v;
        }
    }
    probs.len() - 1
}

/// Independent categorical features, additive mean rewards and an additive
/// softmax logging policy. Rewards are Bernoulli with mean
/// `r̄(a,x) = base[a] + Σ_i effect[a][i][x_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCategorical {
    /// `P(X_i = v)`, indexed `[i][v]`.
    pub value_probs: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    /// Indexed `[a][i][v]`; all zero for features irrelevant to `a`.
    pub effect: Vec<Vec<Vec<f64>>>,
    /// Logging logits, indexed `[a][i][v]`.
    pub logging: Vec<Vec<Vec<f64>>>,
}

/// Parameters for [`PlantedCategorical::planted`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub d: usize,
    pub k: usize,
    pub cardinality: usize,
    pub relevant_per_action: usize,
    /// Reward gap between the top and bottom value of a relevant feature.
    pub effect: f64,
    pub base: f64,
    /// Feature the logging policy keys on; it is never relevant.
    pub bias_feature: Option<usize>,
    pub bias_strength: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            d: 20,
            k: 3,
            cardinality: 2,
            relevant_per_action: 3,
            effect: 0.1,
            base: 0.1,
            bias_feature: Some(0),
            bias_strength: 1.0,
            seed: 0,
        }
    }
}

impl PlantedCategorical {
    pub fn new(
        value_probs: Vec<Vec<f64>>,
        base: Vec<f64>,
        effect: Vec<Vec<Vec<f64>>>,
        logging: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let d = value_probs.len();
        let k = base.len();
        let shape_ok = |t: &Vec<Vec<Vec<f64>>>| {
            t.len() == k
                && t.iter().all(|row| {
                    row.len() == d
                        && row.iter().zip(&value_probs).all(|(v, p)| v.len() == p.len())
                })
        };
        if d == 0 || k < 2 || !shape_ok(&effect) || !shape_ok(&logging) {
            return Err(Error::InvalidArgument("inconsistent generator shapes".into()));
        }
        for p in &value_probs {
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidArgument("value probabilities must sum to 1".into()));
            }
        }
        let model = PlantedCategorical {
            value_probs,
            base,
            effect,
            logging,
        };
        for a in 0..k {
            let lo: f64 = model.base[a]
                + model.effect[a]
                    .iter()
                    .map(|e| e.iter().copied().fold(f64::INFINITY, f64::min))
                    .sum::<f64>();
            let hi: f64 = model.base[a]
                + model.effect[a]
                    .iter()
                    .map(|e| e.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .sum::<f64>();
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "mean reward of action {a} leaves [0, 1]"
                )));
            }
        }
        Ok(model)
    }

    /// Picks `relevant_per_action` features per action uniformly among the
    /// non-bias features; each relevant feature adds `effect · v/(c−1)`.
    pub fn planted(spec: &PlantedSpec) -> Result<Self> {
        let PlantedSpec {
            d,
            k,
            cardinality: c,
            ..
        } = *spec;
        if c < 2 {
            return Err(Error::InvalidArgument("cardinality must be >= 2".into()));
        }
        let mut rng = seeded_rng(spec.seed);
        let candidates: Vec<usize> = (0..d).filter(|&i| Some(i) != spec.bias_feature).collect();
        if spec.relevant_per_action > candidates.len() {
            return Err(Error::InvalidArgument("too many relevant features".into()));
        }
        let mut effect = vec![vec![vec![0.0; c]; d]; k];
        for row in effect.iter_mut() {
            for j in sample(&mut rng, candidates.len(), spec.relevant_per_action) {
                let i = candidates[j];
                for (v, e) in row[i].iter_mut().enumerate() {
                    *e = spec.effect * v as f64 / (c - 1) as f64;
                }
            }
        }
        let mut logging = vec![vec![vec![0.0; c]; d]; k];
        if let Some(b) = spec.bias_feature {
            for (a, row) in logging.iter_mut().enumerate() {
                for (v, l) in row[b].iter_mut().enumerate() {
                    if v == a % c {
                        *l = spec.bias_strength;
                    }
                }
            }
        }
        Self::new(vec![vec![1.0 / c as f64; c]; d], vec![spec.base; k], effect, logging)
    }

    pub fn d(&self) -> usize {
        self.value_probs.len()
    }

    pub fn k(&self) -> usize {
        self.base.len()
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(
            self.value_probs
                .iter()
                .map(|p| FeatureKind::Categorical {
                    cardinality: p.len(),
                })
                .collect(),
        )
        .expect("cardinalities are >= 1")
    }

    /// Features with a non-constant effect on action `a`.
    pub fn relevant(&self, a: usize) -> Vec<usize> {
        (0..self.d())
            .filter(|&i| {
                let e = &self.effect[a][i];
                e.iter().any(|v| (v - e[0]).abs() > 0.0)
            })
            .collect()
    }

    fn effect_mean(&self, a: usize, i: usize) -> f64 {
        self.effect[a][i]
            .iter()
            .zip(&self.value_probs[i])
            .map(|(e, p)| e * p)
            .sum()
    }

    /// `r̄(a) = E[r̄(a, X)]`.
    pub fn marginal_reward(&self, a: usize) -> f64 {
        self.base[a] + (0..self.d()).map(|i| self.effect_mean(a, i)).sum::<f64>()
    }

    /// `r̄(a, x_i = v)`.
    pub fn conditional_reward(&self, a: usize, i: usize, v: usize) -> f64 {
        self.marginal_reward(a) - self.effect_mean(a, i) + self.effect[a][i][v]
    }

    /// Population relevance `g(a,i) = Σ_v P(X_i = v)·ℓ(r̄(a, v) − r̄(a))`.
    pub fn relevance(&self, a: usize, i: usize, loss: Loss) -> f64 {
        let mean = self.effect_mean(a, i);
        self.effect[a][i]
            .iter()
            .zip(&self.value_probs[i])
            .map(|(e, p)| p * loss.apply(e - mean))
            .sum()
    }

    fn values(x: &[f64]) -> impl Iterator<Item = usize> + '_ {
        x.iter().map(|v| *v as usize)
    }

    pub fn logging_probs(&self, x: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = (0..self.k())
            .map(|a| {
                Self::values(x)
                    .enumerate()
                    .map(|(i, v)| self.logging[a][i][v])
                    .sum()
            })
            .collect();
        softmax(&scores)
    }

    pub fn reward_mean(&self, x: &[f64], a: usize) -> f64 {
        self.base[a]
            + Self::values(x)
                .enumerate()
                .map(|(i, v)| self.effect[a][i][v])
                .sum::<f64>()
    }

    fn draw_context(&self, rng: &mut Rng) -> Vec<f64> {
        self.value_probs
            .iter()
            .map(|p| draw_categorical(p, rng) as f64)
            .collect()
    }

    /// `n` logged records with true propensities, plus the realized reward of
    /// every action for each record.
    pub fn sample_with_rewards(&self, n: usize, rng: &mut Rng) -> (LoggedDataset, HiddenRewards) {
        let mut records = Vec::with_capacity(n);
        let mut table = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.draw_context(rng);
            let probs = self.logging_probs(&x);
            let action = draw_categorical(&probs, rng);
            let rewards: Vec<f64> = (0..self.k())
                .map(|a| f64::from(u8::from(rng.random::<f64>() < self.reward_mean(&x, a))))
                .collect();
            records.push(LoggedRecord {
                reward: rewards[action],
                propensity: Some(probs[action]),
                action,
                x,
            });
            table.push(rewards);
        }
        let ds = LoggedDataset::new(self.schema(), self.k(), records, PropensitySource::True)
            .expect("generator output is valid");
        (ds, HiddenRewards { rewards: table })
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> LoggedDataset {
        self.sample_with_rewards(n, rng).0
    }
}

impl ContextModel for PlantedCategorical {
    fn num_actions(&self) -> usize {
        self.k()
    }

    fn propensity(&self, x: &[f64], a: usize) -> f64 {
        self.logging_probs(x)[a]
    }

    fn mean_reward(&self, x: &[f64], a: usize) -> f64 {
        self.reward_mean(x, a)
    }

    /// Enumerated only when the product space has at most 2^16 points.
    fn support(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        let size = self
            .value_probs
            .iter()
            .try_fold(1usize, |acc, p| acc.checked_mul(p.len()))?;
        if size > 1 << 16 {
            return None;
        }
        let mut out = vec![(Vec::new(), 1.0)];
        for probs in &self.value_probs {
            out = out
                .into_iter()
                .flat_map(|(x, q)| {
                    probs.iter().enumerate().map(move |(v, p)| {
                        let mut x = x.clone();
                        x.push(v as f64);
                        (x, q * p)
                    })
                })
                .collect();
        }
        Some(out)
    }

    fn sample_context(&self, rng: &mut Rng) -> Vec<f64> {
        self.draw_context(rng)
    }
}

/// A finite context space listed explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteContextModel {
    pub contexts: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    /// `p0(a | x_c)`, indexed `[c][a]`.
    pub propensities: Vec<Vec<f64>>,
    /// `r̄(a, x_c)`, indexed `[c][a]`.
    pub mean_rewards: Vec<Vec<f64>>,
}

impl FiniteContextModel {
    fn index(&self, x: &[f64]) -> usize {
        self.contexts
            .iter()
            .position(|c| c.as_slice() == x)
            .expect("context outside the model's support")
    }
}

impl ContextModel for FiniteContextModel {
    fn num_actions(&self) -> usize {
        self.propensities.first().map_or(0, Vec::len)
    }

    fn propensity(&self, x: &[f64], a: usize) -> f64 {
        self.propensities[self.index(x)][a]
    }

    fn mean_reward(&self, x: &[f64], a: usize) -> f64 {
        self.mean_rewards[self.index(x)][a]
    }

    fn support(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        Some(self.contexts.iter().cloned().zip(self.probs.iter().copied()).collect())
    }

    fn sample_context(&self, rng: &mut Rng) -> Vec<f64> {
        self.contexts[draw_categorical(&self.probs, rng)].clone()
    }
}
