use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Algorithm, RunRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub algorithm: Algorithm,
    /// Number of policy layers; `None` for the logging policy.
    pub depth: Option<usize>,
    pub setup_digest: String,
    /// Mean test accuracy over completed runs.
    pub acc: Option<f64>,
    pub ci95: Option<f64>,
    pub runs_completed: usize,
    pub accs: Vec<f64>,
    /// Improvement of this algorithm over each other algorithm's mean accuracy.
    pub improvement: BTreeMap<String, f64>,
}

/// `values[i][j]`: improvement of algorithm `i` over algorithm `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementMatrix {
    pub algorithms: Vec<Algorithm>,
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub algorithms: Vec<AlgorithmRow>,
    pub improvement: ImprovementMatrix,
    pub runs_completed: usize,
    pub runs_failed: usize,
    pub runs: Vec<RunRecord>,
    /// Excluded from reproducibility comparisons.
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn row(&self, algorithm: Algorithm) -> Option<&AlgorithmRow> {
        self.algorithms.iter().find(|r| r.algorithm == algorithm)
    }

    /// JSON with the wall-clock field zeroed.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.wall_clock_secs = 0.0;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    pub fn all_runs_completed(&self) -> bool {
        self.runs_failed == 0
    }

    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n = {}, d = {}, k = {}, runs = {}/{}",
            self.n,
            self.d,
            self.k,
            self.runs_completed,
            self.runs_completed + self.runs_failed
        );
        let _ = writeln!(out, "{:<10} {:>6} {:>9} {:>8}", "algorithm", "depth", "acc (%)", "± ci95");
        for row in &self.algorithms {
            let depth = row.depth.map_or_else(|| "-".into(), |d| d.to_string());
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>9} {:>8}",
                row.algorithm.tag(),
                depth,
                pct(row.acc),
                pct(row.ci95)
            );
        }
        let _ = writeln!(out, "\nimprovement (%) of row over column");
        let _ = write!(out, "{:<10}", "");
        for a in &self.improvement.algorithms {
            let _ = write!(out, " {:>8}", a.tag());
        }
        let _ = writeln!(out);
        for (a, vals) in self.improvement.algorithms.iter().zip(&self.improvement.values) {
            let _ = write!(out, "{:<10}", a.tag());
            for v in vals {
                let _ = write!(out, " {:>8}", pct(*v));
            }
            let _ = writeln!(out);
        }
        for r in &self.runs {
            if let super::RunStatus::Error(msg) = &r.status {
                let _ = writeln!(out, "run {} (seed {}) failed: {msg}", r.run, r.seed);
            }
        }
        out
    }
}
