use serde::{Deserialize, Serialize};

use crate::dataset::FeatureKind;

/// Equal-width partition of `[0, 1]` into `s` bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binning {
    s: usize,
}

/// Smallest `s` with `s³ ≥ n`, i.e. `⌈n^{1/3}⌉` in exact integer arithmetic.
pub fn bin_count(n: usize) -> usize {
    let mut s = (n as f64).cbrt().floor() as usize;
    while (s as u128).pow(3) < n as u128 {
        s += 1;
    }
    while s > 1 && ((s - 1) as u128).pow(3) >= n as u128 {
        s -= 1;
    }
    s.max(1)
}

impl Binning {
    pub fn new(s: usize) -> Self {
        Binning { s: s.max(1) }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// `{0, 1/s, ..., 1}`.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.s).map(|j| j as f64 / self.s as f64).collect()
    }

    /// Bin of `x`; the last bin is closed on the right so `1.0` maps to `s - 1`.
    pub fn assign(&self, x: f64) -> usize {
        let x = x.clamp(0.0, 1.0);
        ((x * self.s as f64).floor() as usize).min(self.s - 1)
    }
}

pub fn make_bins(n: usize) -> Binning {
    Binning::new(bin_count(n))
}

pub fn assign_bin(x: f64, binning: &Binning) -> usize {
    binning.assign(x)
}

/// How one feature type is partitioned into strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stratifier {
    Categorical { cardinality: usize },
    Binned { bins: usize },
}

impl Stratifier {
    pub fn for_feature(kind: FeatureKind, n: usize) -> Self {
        match kind {
            FeatureKind::Categorical { cardinality } => Stratifier::Categorical { cardinality },
            FeatureKind::Continuous => Stratifier::Binned {
                bins: bin_count(n),
            },
        }
    }

    pub fn strata(&self) -> usize {
        match *self {
            Stratifier::Categorical { cardinality } => cardinality,
            Stratifier::Binned { bins } => bins,
        }
    }

    pub fn assign(&self, x: f64) -> usize {
        match *self {
            Stratifier::Categorical { cardinality } => (x as usize).min(cardinality - 1),
            Stratifier::Binned { bins } => Binning::new(bins).assign(x),
        }
    }
}
