//! End-to-end experiment orchestration: convert, weigh, select, sweep,
//! train, evaluate and report.

mod config;
mod pipeline;
mod report;

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    CapKeyword, CapSpec, DatasetConfig, ExperimentConfig, PolicyConfig, PropensityConfig,
    PropensityMode, RelevanceConfig,
};
pub use pipeline::{Analyzed, Logged, Pipeline, Weighted};
pub use report::{AlgorithmRow, ExperimentReport, ImprovementMatrix, REPORT_SCHEMA_VERSION};

use crate::dataset::{
    add_noise_features, convert_with, load_supervised_csv, split_indices, subsample_indices,
    FeatureSchema, HiddenRewards, LoadOptions, LoggingPolicy, Normalizer, SupervisedDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, ci95, improvement_score};
use crate::policy::{PolicyArchitecture, TrainConfig};
use crate::propensity::FitOptions;
use crate::relevance::{FeatureMasks, StatsOptions};
use crate::util::{derive_seed, json_digest, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PonnB,
    Ponn,
    PoemB,
    Poem,
    Logging,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::PonnB,
        Algorithm::Ponn,
        Algorithm::PoemB,
        Algorithm::Poem,
        Algorithm::Logging,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::PonnB => "ponn_b",
            Algorithm::Ponn => "ponn",
            Algorithm::PoemB => "poem_b",
            Algorithm::Poem => "poem",
            Algorithm::Logging => "logging",
        }
    }

    pub fn uses_selection(self) -> bool {
        matches!(self, Algorithm::PonnB | Algorithm::PoemB)
    }

    pub fn is_trained(self) -> bool {
        self != Algorithm::Logging
    }

    /// Policy layer widths; empty for the linear reduction.
    pub fn layers(self, configured: &[usize]) -> Option<Vec<usize>> {
        match self {
            Algorithm::PonnB | Algorithm::Ponn => Some(configured.to_vec()),
            Algorithm::PoemB | Algorithm::Poem => Some(Vec::new()),
            Algorithm::Logging => None,
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One grid point. Selection thresholds are absent for algorithms without
/// feature selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub hyper: Hyper,
    /// `None` when the grid has a single point and no sweep training ran.
    pub validation_loss: Option<f64>,
    pub mask_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: Hyper,
    pub points: Vec<SweepPoint>,
}

fn sorted_grid(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Everything a run needs after conversion. The test reward table stays here
/// and is only handed to the evaluation entry points.
pub struct RunContext {
    pub seed: u64,
    pub pipeline: Pipeline<Analyzed>,
    pub test_contexts: Vec<Vec<f64>>,
    test_rewards: HiddenRewards,
    pub logging: LoggingPolicy,
}

impl RunContext {
    pub fn accuracy_of<P: crate::evaluation::ActionPolicy + ?Sized>(&self, policy: &P) -> Result<f64> {
        accuracy(policy, &self.test_contexts, Some(&self.test_rewards))
    }
}

/// Step-B masks for `(λ1, λ2)`, or all features.
fn masks_for(ctx: &Pipeline<Analyzed>, hyper: &Hyper) -> Result<FeatureMasks> {
    match (hyper.lambda1, hyper.lambda2) {
        (Some(l1), Some(l2)) => Ok(ctx.select(l1, l2)?.1),
        _ => {
            let ds = ctx.train_set();
            Ok(FeatureMasks::all(ds.k(), ds.d()))
        }
    }
}

fn train_config(policy: &PolicyConfig, hyper: &Hyper, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda3: hyper.lambda3,
        lr: hyper.lr,
        batch_size: policy.batch_size,
        epochs,
        patience: policy.patience,
        seed,
        ..TrainConfig::default()
    }
}

fn policy_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, "policy")
}

/// Exhaustive grid search on validation corrected cross-entropy. Candidates
/// are enumerated in lexicographic `(λ1, λ2, λ3, lr)` order and the first
/// minimum wins. Points that share masks and `(λ3, lr)` are trained once.
pub fn sweep(
    ctx: &Pipeline<Analyzed>,
    algorithm: Algorithm,
    cfg: &ExperimentConfig,
    run_seed: u64,
) -> Result<SweepResult> {
    let layers = algorithm
        .layers(&cfg.policy.layers)
        .ok_or_else(|| Error::InvalidArgument("the logging policy is not trained".into()))?;
    let l3 = sorted_grid(&cfg.policy.lambda3);
    let lr = sorted_grid(&cfg.policy.lr);
    let selection: Vec<(Option<f64>, Option<f64>)> = if algorithm.uses_selection() {
        let l1 = sorted_grid(&cfg.relevance.lambda1);
        let l2 = sorted_grid(&cfg.relevance.lambda2);
        l1.iter()
            .flat_map(|a| l2.iter().map(move |b| (Some(*a), Some(*b))))
            .collect()
    } else {
        vec![(None, None)]
    };
    let mut mask_cache: Vec<(Option<f64>, Option<f64>, FeatureMasks)> = Vec::new();
    for &(a, b) in &selection {
        let hyper = Hyper {
            lambda1: a,
            lambda2: b,
            lambda3: 0.0,
            lr: 1.0,
        };
        mask_cache.push((a, b, masks_for(ctx, &hyper)?));
    }
    let mut candidates = Vec::new();
    for (a, b, masks) in &mask_cache {
        for &c in &l3 {
            for &r in &lr {
                candidates.push((
                    Hyper {
                        lambda1: *a,
                        lambda2: *b,
                        lambda3: c,
                        lr: r,
                    },
                    masks,
                ));
            }
        }
    }
    if candidates.len() == 1 {
        let (hyper, masks) = candidates[0];
        return Ok(SweepResult {
            best: hyper,
            points: vec![SweepPoint {
                hyper,
                validation_loss: None,
                mask_digest: masks.digest(),
            }],
        });
    }
    // Unique training jobs in first-appearance order.
    let mut jobs: Vec<(String, f64, f64, &FeatureMasks)> = Vec::new();
    let mut job_of = Vec::with_capacity(candidates.len());
    for (hyper, masks) in &candidates {
        let digest = masks.digest();
        let pos = jobs
            .iter()
            .position(|(d, c, r, _)| *d == digest && *c == hyper.lambda3 && *r == hyper.lr);
        job_of.push(match pos {
            Some(p) => p,
            None => {
                jobs.push((digest, hyper.lambda3, hyper.lr, masks));
                jobs.len() - 1
            }
        });
    }
    let seed = policy_seed(run_seed);
    let losses: Vec<f64> = jobs
        .par_iter()
        .map(|(_, c, r, masks)| {
            let arch = PolicyArchitecture::new((*masks).clone(), layers.clone(), seed)?;
            let hyper = Hyper {
                lambda1: None,
                lambda2: None,
                lambda3: *c,
                lr: *r,
            };
            let tc = train_config(&cfg.policy, &hyper, cfg.policy.sweep_epochs, seed);
            Ok(ctx.train_policy(arch, &tc)?.1.best_validation_loss)
        })
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = candidates
        .iter()
        .zip(&job_of)
        .map(|((hyper, _), &j)| SweepPoint {
            hyper: *hyper,
            validation_loss: Some(losses[j]),
            mask_digest: jobs[j].0.clone(),
        })
        .collect();
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.validation_loss < points[best].validation_loss {
            best = i;
        }
    }
    Ok(SweepResult {
        best: points[best].hyper,
        points,
    })
}

/// Outcome of one algorithm in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub acc: f64,
    pub depth: Option<usize>,
    pub hyper: Option<Hyper>,
    pub validation_loss: Option<f64>,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
    /// Selected features per action, for algorithms that select.
    pub masks: Option<Vec<Vec<bool>>>,
    pub relevance_digest: Option<String>,
    pub fallback_actions: Option<usize>,
    pub sweep: Option<SweepResult>,
}

/// Runs `tag` on a prepared run.
pub fn run_algorithm(tag: &str, ctx: &RunContext, cfg: &ExperimentConfig) -> Result<AlgorithmRun> {
    let algorithm: Algorithm = tag.parse()?;
    if algorithm == Algorithm::Logging {
        return Ok(AlgorithmRun {
            algorithm,
            acc: ctx.accuracy_of(&ctx.logging)?,
            depth: None,
            hyper: None,
            validation_loss: None,
            epochs_run: None,
            best_epoch: None,
            masks: None,
            relevance_digest: None,
            fallback_actions: None,
            sweep: None,
        });
    }
    let result = sweep(&ctx.pipeline, algorithm, cfg, ctx.seed)?;
    let hyper = result.best;
    let layers = algorithm.layers(&cfg.policy.layers).expect("trained algorithm");
    let (masks, relevance) = match (hyper.lambda1, hyper.lambda2) {
        (Some(l1), Some(l2)) => {
            let (report, masks) = ctx.pipeline.select(l1, l2)?;
            (masks, Some(report))
        }
        _ => (masks_for(&ctx.pipeline, &hyper)?, None),
    };
    let seed = policy_seed(ctx.seed);
    let arch = PolicyArchitecture::new(masks.clone(), layers.clone(), seed)?;
    let tc = train_config(&cfg.policy, &hyper, cfg.policy.epochs, seed);
    let (net, summary) = ctx.pipeline.train_policy(arch, &tc)?;
    Ok(AlgorithmRun {
        algorithm,
        acc: ctx.accuracy_of(&net)?,
        depth: Some(layers.len()),
        hyper: Some(hyper),
        validation_loss: Some(summary.best_validation_loss),
        epochs_run: Some(summary.epochs_run),
        best_epoch: Some(summary.best_epoch),
        masks: algorithm.uses_selection().then(|| masks.as_rows().to_vec()),
        fallback_actions: relevance
            .as_ref()
            .map(|r| r.per_action.iter().filter(|a| a.fallback).count()),
        relevance_digest: relevance.as_ref().map(json_digest),
        sweep: Some(result),
    })
}

/// Loads the configured supervised dataset, subsampled when `max_rows` is set.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SupervisedDataset> {
    let schema = cfg
        .dataset
        .schema
        .as_deref()
        .map(FeatureSchema::load_json)
        .transpose()?;
    let opts = LoadOptions {
        schema: schema.as_ref(),
        ..LoadOptions::default()
    };
    let (sup, _) = load_supervised_csv(&cfg.dataset.path, &opts)?;
    Ok(match cfg.dataset.max_rows {
        Some(m) if m < sup.len() => {
            sup.subset(&subsample_indices(sup.len(), m, derive_seed(cfg.base_seed, "rows")))
        }
        _ => sup,
    })
}

/// Noise columns, split, train-only normalization, conversion under one
/// logging policy, Step A and Step B statistics.
pub fn prepare_run(sup: &SupervisedDataset, cfg: &ExperimentConfig, seed: u64) -> Result<RunContext> {
    let sup = add_noise_features(sup, cfg.dataset.noise_features, derive_seed(seed, "noise"));
    let [ft, fv, fs] = cfg.dataset.split;
    let idx = split_indices(sup.len(), (ft, fv, fs), derive_seed(seed, "split"))?;
    let mut parts = [idx.train, idx.validation, idx.test].map(|i| sup.subset(&i));
    let normalizer = Normalizer::fit(
        parts[0].schema(),
        parts[0].rows().iter().map(|(x, _)| x.as_slice()),
    );
    for p in &mut parts {
        p.normalize(&normalizer);
    }
    let mut rng = seeded_rng(derive_seed(seed, "theta"));
    let logging = LoggingPolicy::draw(sup.d(), sup.k(), cfg.dataset.kappa, &mut rng)?;
    let [train_sup, val_sup, test_sup] = parts;
    let (train, _) = convert_with(&logging, &train_sup, &mut seeded_rng(derive_seed(seed, "log-train")))?;
    let (validation, _) = convert_with(&logging, &val_sup, &mut seeded_rng(derive_seed(seed, "log-validation")))?;
    let test_rewards = HiddenRewards::from_supervised(&test_sup);
    let test_contexts = test_sup.rows().iter().map(|(x, _)| x.clone()).collect();
    let fit = FitOptions {
        l2: cfg.propensity.l2,
        ..FitOptions::default()
    };
    let pipeline = Pipeline::new(train, validation)?
        .weigh(cfg.propensity.mode, &fit, cfg.propensity.cap)?
        .analyze(
            cfg.relevance.loss,
            StatsOptions {
                bins: cfg.relevance.bins,
            },
        )?;
    Ok(RunContext {
        seed,
        pipeline,
        test_contexts,
        test_rewards,
        logging,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub theta_digest: Option<String>,
    pub cap_m: Option<f64>,
    pub results: Vec<AlgorithmRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Error(String),
}

fn execute_run(sup: &SupervisedDataset, cfg: &ExperimentConfig, run: usize) -> RunRecord {
    let seed = cfg.base_seed.wrapping_add(run as u64);
    let mut record = RunRecord {
        run,
        seed,
        status: RunStatus::Ok,
        theta_digest: None,
        cap_m: None,
        results: Vec::new(),
    };
    let outcome = (|| -> Result<()> {
        let ctx = prepare_run(sup, cfg, seed)?;
        record.theta_digest = Some(ctx.logging.digest());
        record.cap_m = ctx.pipeline.weighted().cap.map(|c| c.m());
        for tag in &cfg.algorithms {
            record.results.push(run_algorithm(tag, &ctx, cfg)?);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("run {run} failed: {e}");
        record.status = RunStatus::Error(e.to_string());
    }
    record
}

/// Digest of the settings two algorithms share when they differ only in masks.
fn setup_digest(cfg: &ExperimentConfig, algorithm: Algorithm) -> String {
    json_digest(&(
        algorithm.layers(&cfg.policy.layers),
        &cfg.policy.lambda3,
        &cfg.policy.lr,
        cfg.policy.batch_size,
        cfg.policy.epochs,
        cfg.policy.sweep_epochs,
        cfg.policy.patience,
        &cfg.propensity,
        &cfg.dataset,
        cfg.base_seed,
    ))
}

/// Runs every configured algorithm `cfg.runs` times on `sup`. A failed run is
/// recorded and the remaining runs continue.
pub fn run_experiment_on(sup: &SupervisedDataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let algorithms: Vec<Algorithm> = cfg
        .algorithms
        .iter()
        .map(|t| t.parse())
        .collect::<Result<_>>()?;
    let runs: Vec<RunRecord> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| execute_run(sup, cfg, r))
        .collect();
    let mut rows = Vec::with_capacity(algorithms.len());
    for &alg in &algorithms {
        let accs: Vec<f64> = runs
            .iter()
            .filter(|r| r.status == RunStatus::Ok)
            .flat_map(|r| r.results.iter().filter(|x| x.algorithm == alg).map(|x| x.acc))
            .collect();
        let acc = if accs.is_empty() {
            None
        } else {
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        };
        rows.push(AlgorithmRow {
            algorithm: alg,
            depth: alg.layers(&cfg.policy.layers).map(|l| l.len()),
            setup_digest: setup_digest(cfg, alg),
            acc,
            ci95: ci95(&accs).ok().map(|(_, h)| h),
            runs_completed: accs.len(),
            accs,
            improvement: BTreeMap::new(),
        });
    }
    let means: Vec<Option<f64>> = rows.iter().map(|r| r.acc).collect();
    let mut values = vec![vec![None; rows.len()]; rows.len()];
    for (i, ours) in means.iter().enumerate() {
        for (j, other) in means.iter().enumerate() {
            if i == j {
                continue;
            }
            if let (Some(a), Some(b)) = (ours, other) {
                values[i][j] = improvement_score(*a, *b).ok();
            }
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, alg) in algorithms.iter().enumerate() {
            if let Some(v) = values[i][j] {
                row.improvement.insert(alg.tag().to_string(), v);
            }
        }
    }
    let failed = runs.iter().filter(|r| r.status != RunStatus::Ok).count();
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_digest: json_digest(cfg),
        n: sup.len(),
        d: sup.d() + cfg.dataset.noise_features,
        k: sup.k(),
        algorithms: rows,
        improvement: ImprovementMatrix {
            algorithms: algorithms.clone(),
            values,
        },
        runs_completed: cfg.runs - failed,
        runs_failed: failed,
        runs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let sup = load_dataset(cfg)?;
    run_experiment_on(&sup, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip_and_unknown_is_rejected() {
        for a in Algorithm::ALL {
            assert_eq!(a.tag().parse::<Algorithm>().unwrap(), a);
        }
        let err = "greedy".parse::<Algorithm>().unwrap_err();
        assert!(err.to_string().contains("ponn_b, ponn, poem_b, poem, logging"));
    }

    #[test]
    fn poem_variants_have_no_hidden_layers() {
        assert_eq!(Algorithm::Poem.layers(&[50, 100]), Some(vec![]));
        assert_eq!(Algorithm::PonnB.layers(&[50, 100]), Some(vec![50, 100]));
        assert_eq!(Algorithm::Logging.layers(&[50]), None);
    }

    #[test]
    fn ablation_pairs_share_setup() {
        let cfg: ExperimentConfig =
            toml::from_str("[dataset]\npath = \"x.csv\"\nkappa = 0.25\n").unwrap();
        assert_eq!(setup_digest(&cfg, Algorithm::Ponn), setup_digest(&cfg, Algorithm::PonnB));
        assert_eq!(setup_digest(&cfg, Algorithm::Poem), setup_digest(&cfg, Algorithm::PoemB));
        assert_ne!(setup_digest(&cfg, Algorithm::Poem), setup_digest(&cfg, Algorithm::Ponn));
    }
}
