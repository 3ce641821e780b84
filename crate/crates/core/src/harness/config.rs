use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::Loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Supervised CSV; relative paths resolve against the config file.
    pub path: PathBuf,
    /// Optional feature schema JSON.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Use a seeded subsample of this many rows.
    #[serde(default)]
    pub max_rows: Option<usize>,
    #[serde(default)]
    pub noise_features: usize,
    pub kappa: f64,
    /// Train, validation, test.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.49, 0.21, 0.30]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    True,
    #[default]
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapKeyword {
    /// `√n_train` with estimated propensities, no cap with true ones.
    #[default]
    Auto,
    None,
}

/// Truncation level: a keyword or an explicit `m > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapSpec {
    Fixed(f64),
    Keyword(CapKeyword),
}

impl Default for CapSpec {
    fn default() -> Self {
        CapSpec::Keyword(CapKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityConfig {
    #[serde(default)]
    pub mode: PropensityMode,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub cap: CapSpec,
}

fn default_l2() -> f64 {
    1e-4
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            mode: PropensityMode::Estimated,
            l2: default_l2(),
            cap: CapSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceConfig {
    #[serde(default)]
    pub loss: Loss,
    #[serde(default = "default_lambda1")]
    pub lambda1: Vec<f64>,
    #[serde(default = "default_lambda2")]
    pub lambda2: Vec<f64>,
    /// Bin count override for continuous features.
    #[serde(default)]
    pub bins: Option<usize>,
}

fn default_lambda1() -> Vec<f64> {
    vec![0.005, 0.01, 0.03, 0.05, 0.1]
}

fn default_lambda2() -> Vec<f64> {
    vec![0.0, 0.001, 0.005, 0.01]
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        RelevanceConfig {
            loss: Loss::Abs,
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_lambda3")]
    pub lambda3: Vec<f64>,
    #[serde(default = "default_lr")]
    pub lr: Vec<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_sweep_epochs")]
    pub sweep_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_layers() -> Vec<usize> {
    vec![50, 100]
}

fn default_lambda3() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1]
}

fn default_lr() -> Vec<f64> {
    vec![1e-3]
}

fn default_batch() -> usize {
    64
}

fn default_epochs() -> usize {
    500
}

fn default_sweep_epochs() -> usize {
    50
}

fn default_patience() -> usize {
    20
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            layers: default_layers(),
            lambda3: default_lambda3(),
            lr: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            sweep_epochs: default_sweep_epochs(),
            patience: default_patience(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub relevance: RelevanceConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<String>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_algorithms() -> Vec<String> {
    ["ponn_b", "ponn", "poem_b", "poem", "logging"]
        .map(String::from)
        .to_vec()
}

fn default_runs() -> usize {
    25
}

impl ExperimentConfig {
    /// Reads TOML or JSON (by extension) and resolves dataset paths against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        };
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.dataset.path = base.join(&cfg.dataset.path);
        if let Some(s) = &cfg.dataset.schema {
            cfg.dataset.schema = Some(base.join(s));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        for tag in &self.algorithms {
            tag.parse::<super::Algorithm>()?;
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return bad("algorithms must not repeat".into());
        }
        let [ft, fv, fs] = self.dataset.split;
        if [ft, fv, fs].iter().any(|f| f.is_nan() || *f <= 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must be positive and sum to 1, got {:?}", self.dataset.split));
        }
        if self.dataset.kappa.is_nan() || self.dataset.kappa < 0.0 {
            return bad("kappa must be >= 0".into());
        }
        let grids = [
            ("relevance.lambda1", &self.relevance.lambda1),
            ("relevance.lambda2", &self.relevance.lambda2),
            ("policy.lambda3", &self.policy.lambda3),
            ("policy.lr", &self.policy.lr),
        ];
        for (name, grid) in grids {
            if grid.is_empty() {
                return bad(format!("{name} grid is empty"));
            }
            if grid.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("{name} values must be finite and >= 0"));
            }
        }
        if self.policy.lr.iter().any(|v| *v <= 0.0) {
            return bad("learning rates must be > 0".into());
        }
        if self.policy.layers.contains(&0) {
            return bad("layer widths must be >= 1".into());
        }
        if let CapSpec::Fixed(m) = self.propensity.cap {
            if m.is_nan() || m <= 1.0 {
                return bad(format!("cap must be > 1, got {m}"));
            }
        }
        Ok(())
    }
}
