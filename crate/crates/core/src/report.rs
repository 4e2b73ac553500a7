//! Measured-versus-predicted reports with z-score verdicts.

use serde::{Deserialize, Serialize};

use crate::domain::GeneratorSpec;
use crate::models::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub eta: Option<f64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub model: Option<ModelSpec>,
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub name: String,
    pub measured: Vec<f64>,
    pub se: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Uncertainty of the prediction itself; zero for closed-form oracles.
    pub predicted_se: Vec<f64>,
    pub z: Vec<f64>,
    pub max_abs_z: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub metadata: ReportMetadata,
    /// Per-realization values behind `measured`, one row per ensemble member.
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
}

/// `(measured − predicted) / SE`. A zero SE yields 0 on exact agreement and
/// ±∞ otherwise.
pub fn z_score(measured: f64, predicted: f64, se: f64) -> f64 {
    let diff = measured - predicted;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Column means and standard errors `sd/√m` of equal-length rows, in row order.
pub fn mean_and_se(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; width];
    for row in rows {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut var = vec![0.0; width];
    for row in rows {
        for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let se = var
        .iter()
        .map(|s| {
            if m >= 2 {
                (s / (m as f64 - 1.0) / m as f64).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    (mean, se)
}

impl TheoryReport {
    pub fn new(
        name: impl Into<String>,
        measured: Vec<f64>,
        se: Vec<f64>,
        predicted: Vec<f64>,
        predicted_se: Vec<f64>,
        threshold: f64,
        metadata: ReportMetadata,
    ) -> Self {
        assert_eq!(measured.len(), predicted.len(), "report shape mismatch");
        assert_eq!(measured.len(), se.len(), "report shape mismatch");
        assert_eq!(measured.len(), predicted_se.len(), "report shape mismatch");
        let z: Vec<f64> = measured
            .iter()
            .zip(&predicted)
            .zip(se.iter().zip(&predicted_se))
            .map(|((m, p), (s, ps))| z_score(*m, *p, (s * s + ps * ps).sqrt()))
            .collect();
        let max_abs_z = z
            .iter()
            .fold(0.0_f64, |a, v| if v.is_nan() { f64::INFINITY } else { a.max(v.abs()) });
        Self {
            name: name.into(),
            measured,
            se,
            predicted,
            predicted_se,
            z,
            max_abs_z,
            threshold,
            verdict: Verdict::from_bool(max_abs_z < threshold),
            metadata,
            rows: Vec::new(),
        }
    }

    /// Report whose measured value is the ensemble mean of `rows`.
    pub fn from_rows(
        name: impl Into<String>,
        rows: Vec<Vec<f64>>,
        predicted: Vec<f64>,
        predicted_se: Vec<f64>,
        threshold: f64,
        metadata: ReportMetadata,
    ) -> Self {
        let (mean, se) = mean_and_se(&rows);
        let mut report = Self::new(name, mean, se, predicted, predicted_se, threshold, metadata);
        report.rows = rows;
        report
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}
