//! Logged contextual-bandit data: schemas, CSV I/O, synthesis from supervised
//! data, noise augmentation and seeded splitting.
//!
//! Actions and labels are 0-based in memory and 1-based on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{f64_digest, seeded_rng, softmax, Rng};

// ── Schema ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Integer codes `0..cardinality`.
    Categorical { cardinality: usize },
    /// Real values, bounded to `[0, 1]` after normalization.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureKind>) -> Result<Self> {
        let schema = FeatureSchema {
            features,
            names: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn continuous(d: usize) -> Result<Self> {
        Self::new(vec![FeatureKind::Continuous; d])
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "{} names for {} feature types",
                names.len(),
                self.features.len()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("at least one feature type is required".into()));
        }
        for (i, kind) in self.features.iter().enumerate() {
            if let FeatureKind::Categorical { cardinality } = kind {
                if *cardinality < 2 {
                    return Err(Error::Schema(format!(
                        "feature {i}: categorical cardinality must be >= 2, got {cardinality}"
                    )));
                }
            }
        }
        if let Some(names) = &self.names {
            if names.len() != self.features.len() {
                return Err(Error::Schema("names length does not match feature count".into()));
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn kind(&self, i: usize) -> FeatureKind {
        self.features[i]
    }

    pub fn name(&self, i: usize) -> String {
        match &self.names {
            Some(names) => names[i].clone(),
            None => format!("f_{i}"),
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: FeatureSchema = serde_json::from_reader(file)?;
        schema.validate()?;
        Ok(schema)
    }

    fn check_value(&self, i: usize, v: f64, row: usize) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Validation {
                row,
                message: format!("feature {i} is not finite"),
            });
        }
        if let FeatureKind::Categorical { cardinality } = self.features[i] {
            if v < 0.0 || v.fract() != 0.0 || v as usize >= cardinality {
                return Err(Error::Validation {
                    row,
                    message: format!(
                        "categorical feature {i} must be an integer in 0..{cardinality}, got {v}"
                    ),
                });
            }
        }
        Ok(())
    }
}

// ── Records ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub x: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// True propensity of the logged action, when the logger recorded it.
    pub propensity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    True,
    Estimated,
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    schema: FeatureSchema,
    k: usize,
    records: Vec<LoggedRecord>,
    propensity_source: PropensitySource,
}

impl LoggedDataset {
    pub fn new(
        schema: FeatureSchema,
        k: usize,
        records: Vec<LoggedRecord>,
        propensity_source: PropensitySource,
    ) -> Result<Self> {
        schema.validate()?;
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 actions, got {k}")));
        }
        let d = schema.d();
        for (row, rec) in records.iter().enumerate() {
            if rec.x.len() != d {
                return Err(Error::Validation {
                    row,
                    message: format!("expected {d} features, got {}", rec.x.len()),
                });
            }
            for (i, v) in rec.x.iter().enumerate() {
                schema.check_value(i, *v, row)?;
            }
            if rec.action >= k {
                return Err(Error::Validation {
                    row,
                    message: format!("action {} outside 1..={k}", rec.action + 1),
                });
            }
            if !(0.0..=1.0).contains(&rec.reward) {
                return Err(Error::Validation {
                    row,
                    message: format!("reward {} outside [0, 1]", rec.reward),
                });
            }
            match rec.propensity {
                Some(p) if !(p > 0.0 && p <= 1.0) => {
                    return Err(Error::Validation {
                        row,
                        message: format!("propensity {p} outside (0, 1]"),
                    })
                }
                None if propensity_source == PropensitySource::True => {
                    return Err(Error::Validation {
                        row,
                        message: "true propensities declared but record has none".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(LoggedDataset {
            schema,
            k,
            records,
            propensity_source,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn d(&self) -> usize {
        self.schema.d()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn propensity_source(&self) -> PropensitySource {
        self.propensity_source
    }

    /// True propensities, if every record carries one.
    pub fn true_propensities(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.propensity).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LoggedDataset {
        LoggedDataset {
            schema: self.schema.clone(),
            k: self.k,
            records: indices.iter().map(|&j| self.records[j].clone()).collect(),
            propensity_source: self.propensity_source,
        }
    }

    /// Column `i` as a vector.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[i]).collect()
    }

    /// Applies `normalizer` to every record in place.
    pub fn normalize(&mut self, normalizer: &Normalizer) {
        for r in &mut self.records {
            normalizer.apply_row(&mut r.x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    schema: FeatureSchema,
    k: usize,
    rows: Vec<(Vec<f64>, usize)>,
}

impl SupervisedDataset {
    pub fn new(schema: FeatureSchema, k: usize, rows: Vec<(Vec<f64>, usize)>) -> Result<Self> {
        schema.validate()?;
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 labels, got {k}")));
        }
        for (row, (x, y)) in rows.iter().enumerate() {
            if x.len() != schema.d() {
                return Err(Error::Validation {
                    row,
                    message: format!("expected {} features, got {}", schema.d(), x.len()),
                });
            }
            for (i, v) in x.iter().enumerate() {
                schema.check_value(i, *v, row)?;
            }
            if *y >= k {
                return Err(Error::Validation {
                    row,
                    message: format!("label {} outside 1..={k}", y + 1),
                });
            }
        }
        Ok(SupervisedDataset { schema, k, rows })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn d(&self) -> usize {
        self.schema.d()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(Vec<f64>, usize)] {
        &self.rows
    }

    /// Full-information reward `1{Y_j = a}`.
    pub fn reward(&self, j: usize, a: usize) -> f64 {
        if self.rows[j].1 == a {
            1.0
        } else {
            0.0
        }
    }

    pub fn subset(&self, indices: &[usize]) -> SupervisedDataset {
        SupervisedDataset {
            schema: self.schema.clone(),
            k: self.k,
            rows: indices.iter().map(|&j| self.rows[j].clone()).collect(),
        }
    }

    pub fn normalize(&mut self, normalizer: &Normalizer) {
        for (x, _) in &mut self.rows {
            normalizer.apply_row(x);
        }
    }
}

/// Counterfactual rewards of every action for every logged row. Only the
/// evaluation entry points read it.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenRewards {
    pub(crate) rewards: Vec<Vec<f64>>,
}

impl HiddenRewards {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn k(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> HiddenRewards {
        HiddenRewards {
            rewards: indices.iter().map(|&j| self.rewards[j].clone()).collect(),
        }
    }

    pub fn from_supervised(sup: &SupervisedDataset) -> HiddenRewards {
        let rewards = (0..sup.len())
            .map(|j| (0..sup.k()).map(|a| sup.reward(j, a)).collect())
            .collect();
        HiddenRewards { rewards }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.k();
        w.write_record((1..=k).map(|a| format!("r_{a}")))?;
        for row in &self.rewards {
            w.write_record(row.iter().map(|v| format_f64(*v)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<HiddenRewards> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rewards = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let values = rec
                .iter()
                .map(|s| parse_f64(s, path, row))
                .collect::<Result<Vec<_>>>()?;
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation {
                    row,
                    message: "hidden rewards must lie in [0, 1]".into(),
                });
            }
            rewards.push(values);
        }
        Ok(HiddenRewards { rewards })
    }
}

// ── Normalization ───────────────────────────────────────────────────────

/// Per-column min-max constants for continuous features. Categorical
/// columns pass through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub continuous: Vec<bool>,
}

impl Normalizer {
    pub fn fit<'a>(schema: &FeatureSchema, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let d = schema.d();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for x in rows {
            for i in 0..d {
                mins[i] = mins[i].min(x[i]);
                maxs[i] = maxs[i].max(x[i]);
            }
        }
        let continuous = schema
            .features
            .iter()
            .map(|k| matches!(k, FeatureKind::Continuous))
            .collect();
        Normalizer {
            mins,
            maxs,
            continuous,
        }
    }

    /// Maps continuous values to `(v - min) / (max - min)`, clamped to `[0, 1]`.
    /// Constant columns map to 0.
    pub fn apply_row(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            if !self.continuous[i] {
                continue;
            }
            let span = self.maxs[i] - self.mins[i];
            *v = if span > 0.0 && span.is_finite() {
                ((*v - self.mins[i]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

// ── CSV I/O ─────────────────────────────────────────────────────────────

fn parse_f64(s: &str, path: &Path, row: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        message: format!("cannot parse `{s}` as a number"),
    })
}

fn format_f64(v: f64) -> String {
    // Shortest round-trip representation.
    format!("{v}")
}

fn parse_index(s: &str, path: &Path, row: usize, what: &str, k: Option<usize>) -> Result<usize> {
    let v = parse_f64(s, path, row)?;
    if v.fract() != 0.0 || v < 1.0 || k.is_some_and(|k| v > k as f64) {
        return Err(Error::Validation {
            row,
            message: match k {
                Some(k) => format!("{what} {v} outside 1..={k}"),
                None => format!("{what} {v} must be a positive integer"),
            },
        });
    }
    Ok(v as usize - 1)
}

fn schema_for(header_features: &[String], schema: Option<&FeatureSchema>) -> Result<FeatureSchema> {
    match schema {
        Some(s) if s.d() != header_features.len() => Err(Error::Schema(format!(
            "schema declares {} features but file has {}",
            s.d(),
            header_features.len()
        ))),
        Some(s) => Ok(s.clone()),
        None => FeatureSchema::continuous(header_features.len())?
            .with_names(header_features.to_vec()),
    }
}

/// Options shared by the CSV loaders.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions<'a> {
    pub schema: Option<&'a FeatureSchema>,
    /// Action/label count; inferred from the largest index when absent.
    pub k: Option<usize>,
    /// Reuse these constants instead of fitting min-max on the file.
    pub normalizer: Option<&'a Normalizer>,
}

/// Loads a supervised CSV: feature columns followed by a 1-based `label`.
pub fn load_supervised_csv(
    path: &Path,
    opts: &LoadOptions<'_>,
) -> Result<(SupervisedDataset, Normalizer)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .unwrap_or(header.len().saturating_sub(1));
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != label_col)
        .map(|(_, h)| h.clone())
        .collect();
    let schema = schema_for(&feature_names, opts.schema)?;
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("expected {} columns, got {}", header.len(), rec.len()),
            });
        }
        let mut x = Vec::with_capacity(schema.d());
        let mut label = 0;
        for (c, field) in rec.iter().enumerate() {
            if c == label_col {
                label = parse_index(field, path, row, "label", opts.k)?;
            } else {
                x.push(parse_f64(field, path, row)?);
            }
        }
        rows.push((x, label));
    }
    let k = opts
        .k
        .unwrap_or_else(|| rows.iter().map(|(_, y)| y + 1).max().unwrap_or(0));
    let normalizer = match opts.normalizer {
        Some(n) => n.clone(),
        None => Normalizer::fit(&schema, rows.iter().map(|(x, _)| x.as_slice())),
    };
    for (x, _) in &mut rows {
        normalizer.apply_row(x);
    }
    Ok((SupervisedDataset::new(schema, k, rows)?, normalizer))
}

/// Loads a logged CSV with columns `f_0..f_{d-1}, action, reward[, propensity]`.
/// An empty propensity cell means "not recorded".
pub fn load_logged_csv(path: &Path, opts: &LoadOptions<'_>) -> Result<(LoggedDataset, Normalizer)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let action_col = find("action").ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        message: "missing `action` column".into(),
    })?;
    let reward_col = find("reward").ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        message: "missing `reward` column".into(),
    })?;
    let prop_col = find("propensity");
    let reserved = |c: usize| c == action_col || c == reward_col || Some(c) == prop_col;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| !reserved(*c))
        .map(|(_, h)| h.clone())
        .collect();
    let schema = schema_for(&feature_names, opts.schema)?;

    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("expected {} columns, got {}", header.len(), rec.len()),
            });
        }
        let mut x = Vec::with_capacity(schema.d());
        let mut action = 0;
        let mut reward = 0.0;
        let mut propensity = None;
        for (c, field) in rec.iter().enumerate() {
            if c == action_col {
                action = parse_index(field, path, row, "action", opts.k)?;
            } else if c == reward_col {
                reward = parse_f64(field, path, row)?;
            } else if Some(c) == prop_col {
                if !field.trim().is_empty() {
                    propensity = Some(parse_f64(field, path, row)?);
                }
            } else {
                x.push(parse_f64(field, path, row)?);
            }
        }
        records.push(LoggedRecord {
            x,
            action,
            reward,
            propensity,
        });
    }
    let k = opts
        .k
        .unwrap_or_else(|| records.iter().map(|r| r.action + 1).max().unwrap_or(0).max(2));
    let normalizer = match opts.normalizer {
        Some(n) => n.clone(),
        None => Normalizer::fit(&schema, records.iter().map(|r| r.x.as_slice())),
    };
    for r in &mut records {
        normalizer.apply_row(&mut r.x);
    }
    let source = if !records.is_empty() && records.iter().all(|r| r.propensity.is_some()) {
        PropensitySource::True
    } else {
        PropensitySource::Absent
    };
    Ok((LoggedDataset::new(schema, k, records, source)?, normalizer))
}

pub fn write_logged_csv(ds: &LoggedDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = (0..ds.d()).map(|i| ds.schema().name(i)).collect();
    header.extend(["action", "reward", "propensity"].map(String::from));
    w.write_record(&header)?;
    for r in ds.records() {
        let mut fields: Vec<String> = r.x.iter().map(|v| format_f64(*v)).collect();
        fields.push((r.action + 1).to_string());
        fields.push(format_f64(r.reward));
        fields.push(r.propensity.map(format_f64).unwrap_or_default());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_supervised_csv(ds: &SupervisedDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = (0..ds.d()).map(|i| ds.schema().name(i)).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (x, y) in ds.rows() {
        let mut fields: Vec<String> = x.iter().map(|v| format_f64(*v)).collect();
        fields.push((y + 1).to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

// ── Supervised-to-bandit conversion ─────────────────────────────────────

/// Softmax logging policy `p0(a|x) ∝ exp(θ_aᵀx)` with Gaussian weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggingPolicy {
    pub kappa: f64,
    pub theta: Vec<Vec<f64>>,
}

impl LoggingPolicy {
    /// Draws `θ_a ~ N(0, κ I)` for each of `k` actions.
    pub fn draw(d: usize, k: usize, kappa: f64, rng: &mut Rng) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
        }
        let theta = if kappa == 0.0 {
            vec![vec![0.0; d]; k]
        } else {
            let normal = Normal::new(0.0, kappa.sqrt()).expect("valid std");
            (0..k)
                .map(|_| (0..d).map(|_| normal.sample(rng)).collect())
                .collect()
        };
        Ok(LoggingPolicy { kappa, theta })
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .theta
            .iter()
            .map(|t| t.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        softmax(&scores)
    }

    pub fn digest(&self) -> String {
        let flat: Vec<f64> = self.theta.iter().flatten().copied().collect();
        f64_digest(&flat)
    }
}

/// Logs `sup` under `policy`: samples `A_j ~ p0(·|X_j)`, keeps only
/// `R_j(A_j)`, records the true propensity and returns the full reward table
/// separately.
pub fn convert_with(
    policy: &LoggingPolicy,
    sup: &SupervisedDataset,
    rng: &mut Rng,
) -> Result<(LoggedDataset, HiddenRewards)> {
    if policy.k() != sup.k() {
        return Err(Error::InvalidArgument(format!(
            "logging policy has {} actions but dataset has {} labels",
            policy.k(),
            sup.k()
        )));
    }
    let mut records = Vec::with_capacity(sup.len());
    for (j, (x, _)) in sup.rows().iter().enumerate() {
        let probs = policy.probabilities(x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = probs.len() - 1;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                action = a;
                break;
            }
        }
        records.push(LoggedRecord {
            x: x.clone(),
            action,
            reward: sup.reward(j, action),
            propensity: Some(probs[action]),
        });
    }
    let logged = LoggedDataset::new(sup.schema().clone(), sup.k(), records, PropensitySource::True)?;
    Ok((logged, HiddenRewards::from_supervised(sup)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionManifest {
    pub kappa: f64,
    pub seed: u64,
    pub theta_digest: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

/// Draws a logging policy from `seed` and logs `sup` under it.
pub fn convert_to_bandit(
    sup: &SupervisedDataset,
    kappa: f64,
    seed: u64,
) -> Result<(LoggedDataset, HiddenRewards, LoggingPolicy)> {
    let mut rng = seeded_rng(seed);
    let policy = LoggingPolicy::draw(sup.d(), sup.k(), kappa, &mut rng)?;
    let (logged, hidden) = convert_with(&policy, sup, &mut rng)?;
    Ok((logged, hidden, policy))
}

/// Appends `count` continuous standard-normal columns, min-max normalized
/// over the dataset.
pub fn add_noise_features(ds: &SupervisedDataset, count: usize, seed: u64) -> SupervisedDataset {
    if count == 0 {
        return ds.clone();
    }
    let mut rng = seeded_rng(seed);
    let n = ds.len();
    let mut noise = vec![vec![0.0; count]; n];
    for row in noise.iter_mut() {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    for c in 0..count {
        let (lo, hi) = noise
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[c]), hi.max(r[c]))
            });
        let span = hi - lo;
        for row in noise.iter_mut() {
            row[c] = if span > 0.0 { (row[c] - lo) / span } else { 0.0 };
        }
    }
    let d = ds.d();
    let mut features = ds.schema.features.clone();
    features.extend(std::iter::repeat_n(FeatureKind::Continuous, count));
    let names = (0..d + count)
        .map(|i| {
            if i < d {
                ds.schema.name(i)
            } else {
                format!("noise_{}", i - d)
            }
        })
        .collect();
    let schema = FeatureSchema {
        features,
        names: Some(names),
    };
    let rows = ds
        .rows
        .iter()
        .zip(noise)
        .map(|((x, y), extra)| {
            let mut x = x.clone();
            x.extend(extra);
            (x, *y)
        })
        .collect();
    SupervisedDataset {
        schema,
        k: ds.k,
        rows,
    }
}

// ── Splitting ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniformly shuffled partition of `0..n`. Validation and test sizes are
/// floor-rounded; the remainder goes to train.
pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::InvalidArgument("split fractions must be non-negative".into()));
    }
    if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let n_val = ((n as f64) * fv + 1e-9).floor() as usize;
    let n_test = ((n as f64) * fs + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    for (name, size) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(Error::EmptySplit(name));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        validation,
        test,
    })
}

/// Seeded subsample of `m` distinct indices of `0..n` (all of them when `m >= n`),
/// returned in ascending order.
pub fn subsample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if m < n {
        order.shuffle(&mut seeded_rng(seed));
        order.truncate(m);
        order.sort_unstable();
    }
    order
}
