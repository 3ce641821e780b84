use crate::error::{Error, Result};
use crate::util::{seeded_rng, Rng};

/// Which deviation bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundMode {
    /// Categorical feature types.
    Categorical,
    /// Binned continuous feature types with Lipschitz constant `lipschitz` and
    /// truncation level `m`. Bias terms are not included.
    Binned { lipschitz: f64, m: f64 },
}

/// Right-hand side of the empirical-Bernstein deviation bound on
/// `|Ĝ(a,i) − g(a,i)|`, holding with probability at least `1 − 3δ`.
///
/// `b` is the number of strata, `vbar` and `v` the weighted per-stratum and
/// overall sample variances, `max_weight` the `M` constant and `loss_lipschitz`
/// the `B` constant of the loss.
#[allow(clippy::too_many_arguments)]
pub fn bernstein_bound(
    n: usize,
    b: usize,
    vbar: f64,
    v: f64,
    max_weight: f64,
    delta: f64,
    loss_lipschitz: f64,
    mode: BoundMode,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0 / 3.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1/3], got {delta}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("bound needs n >= 2".into()));
    }
    let nf = n as f64;
    let l3 = (3.0 / delta).ln();
    let l1 = (1.0 / delta).ln();
    let big_b = loss_lipschitz;
    Ok(match mode {
        BoundMode::Categorical => {
            let bf = b as f64;
            big_b
                * ((2.0 * bf * l3 * vbar / nf).sqrt()
                    + (2.0 * l3 * v / nf).sqrt()
                    + max_weight * (bf + 1.0) * l3 / nf)
                + (2.0 * (l1 + bf * std::f64::consts::LN_2) / nf).sqrt()
        }
        BoundMode::Binned { lipschitz, m } => {
            let cube = nf.cbrt();
            big_b * ((4.0 * l3).sqrt() / cube * (vbar.sqrt() + v.sqrt()) + lipschitz / cube)
                + (4.0 * m * big_b * l3 + (2.0 * l1 + std::f64::consts::LN_2).sqrt())
                    / (cube * cube)
        }
    })
}

/// A synthetic data-generating process with known logging policy and mean
/// rewards.
pub trait ContextModel {
    fn num_actions(&self) -> usize;
    /// `p0(a | x)`.
    fn propensity(&self, x: &[f64], a: usize) -> f64;
    /// `r̄(a, x)`.
    fn mean_reward(&self, x: &[f64], a: usize) -> f64;
    /// The context distribution as `(x, probability)` pairs when it is finite.
    fn support(&self) -> Option<Vec<(Vec<f64>, f64)>>;
    fn sample_context(&self, rng: &mut Rng) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Enumerate,
    MonteCarlo { draws: usize, seed: u64 },
}

/// Minimum Monte Carlo sample size accepted by [`truncation_bias_oracle`].
pub const MIN_ORACLE_DRAWS: usize = 1_000_000;

/// Bias of the truncated IPS estimate of `r̄(a)` under estimated propensities:
/// `E[r̄(a,X)((1 − p0/p̂)·1{p̂ ≥ 1/m} + (1 − p0·m)·1{p̂ < 1/m})]`.
pub fn truncation_bias_oracle<M, P>(
    model: &M,
    a: usize,
    m: f64,
    phat: P,
    method: OracleMethod,
) -> Result<f64>
where
    M: ContextModel + ?Sized,
    P: Fn(&[f64], usize) -> f64,
{
    if a >= model.num_actions() {
        return Err(Error::InvalidArgument(format!("action {a} out of range")));
    }
    let term = |x: &[f64]| {
        let p0 = model.propensity(x, a);
        let ph = phat(x, a);
        let factor = if ph >= 1.0 / m {
            1.0 - p0 / ph
        } else {
            1.0 - p0 * m
        };
        model.mean_reward(x, a) * factor
    };
    match method {
        OracleMethod::Enumerate => {
            let support = model.support().ok_or_else(|| {
                Error::InvalidArgument("model has no finite support to enumerate".into())
            })?;
            Ok(support.iter().map(|(x, p)| p * term(x)).sum())
        }
        OracleMethod::MonteCarlo { draws, seed } => {
            if draws < MIN_ORACLE_DRAWS {
                return Err(Error::InvalidArgument(format!(
                    "Monte Carlo oracle needs at least {MIN_ORACLE_DRAWS} draws"
                )));
            }
            let mut rng = seeded_rng(seed);
            let mut total = 0.0;
            for _ in 0..draws {
                let x = model.sample_context(&mut rng);
                total += term(&x);
            }
            Ok(total / draws as f64)
        }
    }
}
