use std::path::{Path, PathBuf};

use rand::Rng as _;

use ponn_core::dataset::{
    add_noise_features, convert_to_bandit, load_supervised_csv, FeatureSchema, LoadOptions,
    LoggedDataset, LoggedRecord, LoggingPolicy, PropensitySource, SupervisedDataset,
};
use ponn_core::evaluation::accuracy;
use ponn_core::propensity::{self, log_likelihood_gradient, penalized_log_likelihood, FitOptions};
use ponn_core::util::{seeded_rng, softmax};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn load(name: &str) -> SupervisedDataset {
    load_supervised_csv(&data(name), &LoadOptions::default()).unwrap().0
}

/// Mean logging-policy accuracy over `draws` logging policies, each on its
/// own noise columns.
fn logging_accuracy(sup: &SupervisedDataset, kappa: f64, draws: u64) -> f64 {
    let total: f64 = (0..draws)
        .map(|seed| {
            let noisy = add_noise_features(sup, 16, seed);
            let (_, hidden, policy) = convert_to_bandit(&noisy, kappa, seed).unwrap();
            let contexts: Vec<Vec<f64>> = noisy.rows().iter().map(|(x, _)| x.clone()).collect();
            accuracy(&policy, &contexts, Some(&hidden)).unwrap()
        })
        .sum();
    total / draws as f64
}

#[test]
fn recorded_propensities_equal_the_logging_softmax() {
    let sup = load("pendigits.csv");
    let (logged, _, policy) = convert_to_bandit(&sup, 0.25, 4).unwrap();
    assert_eq!(logged.len(), sup.len());
    for (r, (x, _)) in logged.records().iter().zip(sup.rows()) {
        assert_eq!(&r.x, x);
        let p = policy.probabilities(&r.x)[r.action];
        assert!((r.propensity.unwrap() - p).abs() < 1e-12);
    }
}

#[test]
fn action_frequencies_match_the_logging_policy() {
    let mut rng = seeded_rng(21);
    let policy = LoggingPolicy::draw(3, 5, 1.0, &mut rng).unwrap();
    let x = [0.2, 0.9, 0.5];
    let rows = vec![(x.to_vec(), 0); 100_000];
    let sup = SupervisedDataset::new(FeatureSchema::continuous(3).unwrap(), 5, rows).unwrap();
    let mut draw_rng = seeded_rng(22);
    let (logged, _) = ponn_core::dataset::convert_with(&policy, &sup, &mut draw_rng).unwrap();
    let mut counts = [0usize; 5];
    for r in logged.records() {
        counts[r.action] += 1;
    }
    let p = policy.probabilities(&x);
    let chi2: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&c, &q)| {
            let e = q * 1e5;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 99.9% quantile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 18.47, "chi-square {chi2}");
}

#[test]
fn pendigits_logging_policy_is_near_chance() {
    let sup = load("pendigits.csv");
    assert_eq!(add_noise_features(&sup, 16, 1).d(), 32);
    let acc = logging_accuracy(&sup, 0.25, 25);
    assert!((acc - 0.10).abs() <= 0.03, "logging accuracy {acc}");
}

#[test]
fn satimage_logging_policy_accuracy() {
    let sup = load("satimage.csv");
    let acc = logging_accuracy(&sup, 0.5, 25);
    assert!((acc - 0.166).abs() <= 0.05, "logging accuracy {acc}");
}

fn logged_under(policy: &LoggingPolicy, n: usize, d: usize, seed: u64) -> LoggedDataset {
    let mut rng = seeded_rng(seed);
    let rows = (0..n)
        .map(|_| ((0..d).map(|_| rng.random::<f64>()).collect(), 0))
        .collect();
    let sup = SupervisedDataset::new(FeatureSchema::continuous(d).unwrap(), policy.k(), rows).unwrap();
    ponn_core::dataset::convert_with(policy, &sup, &mut rng).unwrap().0
}

#[test]
fn fit_recovers_known_logging_policy() {
    let mut rng = seeded_rng(8);
    // The fitted model has no intercept, so the generator gets none either.
    let policy = LoggingPolicy::draw(4, 3, 1.0, &mut rng).unwrap();
    let ds = logged_under(&policy, 10_000, 4, 9);
    let model = propensity::fit(&ds, &FitOptions::default()).unwrap();
    let fitted = model.logged_propensities(&ds).unwrap();
    let err: f64 = ds
        .records()
        .iter()
        .zip(&fitted)
        .map(|(r, p)| (p - r.propensity.unwrap()).abs())
        .sum::<f64>()
        / ds.len() as f64;
    assert!(err < 0.03, "mean absolute propensity error {err}");
}

#[test]
fn uniform_logging_is_predicted_uniform() {
    let policy = LoggingPolicy {
        kappa: 0.0,
        theta: vec![vec![0.0; 3]; 4],
    };
    let ds = logged_under(&policy, 10_000, 3, 3);
    let model = propensity::fit(&ds, &FitOptions::default()).unwrap();
    let mut rng = seeded_rng(4);
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        for p in model.predict(&x) {
            assert!((p - 0.25).abs() < 0.02, "{p}");
        }
    }
}

#[test]
fn gradient_vanishes_and_matches_differences_at_convergence() {
    let mut rng = seeded_rng(30);
    for trial in 0..5 {
        let policy = LoggingPolicy::draw(3, 3, 2.0, &mut rng).unwrap();
        let ds = logged_under(&policy, 400, 3, 100 + trial);
        let opts = FitOptions::default();
        let model = propensity::fit(&ds, &opts).unwrap();
        let grad = log_likelihood_gradient(&ds, &model.beta, opts.l2);
        let h = 1e-5;
        for a in 0..2 {
            for i in 0..3 {
                let mut b = model.beta.clone();
                b[a][i] += h;
                let up = penalized_log_likelihood(&ds, &b, opts.l2);
                b[a][i] -= 2.0 * h;
                let down = penalized_log_likelihood(&ds, &b, opts.l2);
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - grad[a][i]).abs() < 1e-5 * numeric.abs().max(1e-2));
            }
        }
    }
}

#[test]
fn softmax_of_prediction_matches_linear_scores() {
    let records = vec![
        LoggedRecord {
            x: vec![1.0, 0.0],
            action: 0,
            reward: 0.0,
            propensity: None,
        },
        LoggedRecord {
            x: vec![0.0, 1.0],
            action: 1,
            reward: 1.0,
            propensity: None,
        },
    ];
    let ds = LoggedDataset::new(FeatureSchema::continuous(2).unwrap(), 2, records, PropensitySource::Absent)
        .unwrap();
    let model = propensity::fit(&ds, &FitOptions::default()).unwrap();
    let x = [0.3, 0.7];
    let scores: Vec<f64> = model
        .beta
        .iter()
        .map(|b| b.iter().zip(&x).map(|(u, v)| u * v).sum())
        .collect();
    let want = softmax(&scores);
    for (p, q) in model.predict(&x).iter().zip(&want) {
        assert!((p - q).abs() < 1e-12);
    }
}
