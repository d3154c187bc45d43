//! Nested segment → patient → model metrics.
//!
//! A patient's metric is the unweighted mean over its segments and the model
//! metric the unweighted mean over patients, so every patient counts once no
//! matter how many segments it contributes. Percentiles are taken over the
//! pooled segment MAEs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SegmentKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    #[serde(flatten)]
    pub key: SegmentKey,
    pub mse: f64,
    pub mae: f64,
    /// Population variance of the observed target window.
    pub variance: f64,
    /// Population variance of the history, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_variance: Option<f64>,
    /// Population variance of history and target together, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_variance: Option<f64>,
    pub s: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Per-point MAE and MSE of one forecast.
pub fn score_segment(y: &[f64], y_hat: &[f64]) -> Result<SegmentScore> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::ShapeError(format!(
            "{} observations, {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    let s = y.len() as f64;
    let (abs, sq) = y.iter().zip(y_hat).fold((0.0, 0.0), |(a, q), (o, p)| {
        let e = o - p;
        (a + e.abs(), q + e * e)
    });
    Ok(SegmentScore {
        key: SegmentKey {
            patient_id: String::new(),
            recording_id: String::new(),
            seg_index: 0,
        },
        mse: sq / s,
        mae: abs / s,
        variance: population_variance(y),
        input_variance: None,
        window_variance: None,
        s: y.len(),
    })
}

impl SegmentScore {
    pub fn with_key(mut self, key: SegmentKey) -> Self {
        self.key = key;
        self
    }

    /// Fills in the history-based variance alternatives.
    pub fn with_history(mut self, x: &[f64], y: &[f64]) -> Self {
        self.input_variance = Some(population_variance(x));
        let all: Vec<f64> = x.iter().chain(y).copied().collect();
        self.window_variance = Some(population_variance(&all));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording_id: Option<String>,
    pub n_segments: usize,
    pub mae: f64,
    pub mse: f64,
    /// Mean target-window variance of the group's segments.
    pub mean_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_patients: usize,
    pub n_segments: usize,
    pub mse: f64,
    pub mae: f64,
    pub p90_mae: f64,
    pub p99_mae: f64,
    /// MAE regressed on target-window variance; absent when degenerate.
    pub variance_fit: Option<LinearFit>,
    pub patients: Vec<GroupMetrics>,
    pub recordings: Vec<GroupMetrics>,
    pub segments: Vec<SegmentScore>,
}

/// Linear-interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn group(patient_id: &str, recording_id: Option<&str>, scores: &[&SegmentScore]) -> GroupMetrics {
    let k = scores.len() as f64;
    GroupMetrics {
        patient_id: patient_id.to_string(),
        recording_id: recording_id.map(str::to_string),
        n_segments: scores.len(),
        mae: scores.iter().map(|s| s.mae).sum::<f64>() / k,
        mse: scores.iter().map(|s| s.mse).sum::<f64>() / k,
        mean_variance: scores.iter().map(|s| s.variance).sum::<f64>() / k,
    }
}

/// Builds the nested report. Input order does not matter: scores are sorted
/// by key before any reduction.
pub fn aggregate(mut scores: Vec<SegmentScore>) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    scores.sort_by(|a, b| a.key.cmp(&b.key));

    let mut by_patient: BTreeMap<&str, Vec<&SegmentScore>> = BTreeMap::new();
    let mut by_recording: BTreeMap<(&str, &str), Vec<&SegmentScore>> = BTreeMap::new();
    for s in &scores {
        by_patient.entry(&s.key.patient_id).or_default().push(s);
        by_recording
            .entry((&s.key.patient_id, &s.key.recording_id))
            .or_default()
            .push(s);
    }
    let patients: Vec<GroupMetrics> = by_patient
        .iter()
        .map(|(p, ss)| group(p, None, ss))
        .collect();
    let recordings: Vec<GroupMetrics> = by_recording
        .iter()
        .map(|((p, r), ss)| group(p, Some(r), ss))
        .collect();

    let n = patients.len() as f64;
    let mae = patients.iter().map(|p| p.mae).sum::<f64>() / n;
    let mse = patients.iter().map(|p| p.mse).sum::<f64>() / n;

    let mut maes: Vec<f64> = scores.iter().map(|s| s.mae).collect();
    maes.sort_by(f64::total_cmp);

    Ok(MetricsReport {
        n_patients: patients.len(),
        n_segments: scores.len(),
        mse,
        mae,
        p90_mae: percentile(&maes, 0.90),
        p99_mae: percentile(&maes, 0.99),
        variance_fit: variance_mae_fit(&scores).ok(),
        patients,
        recordings,
        segments: scores,
    })
}

/// Ordinary least squares of segment MAE on target-window variance.
pub fn variance_mae_fit(scores: &[SegmentScore]) -> Result<LinearFit> {
    let pairs: Vec<(f64, f64)> = scores.iter().map(|s| (s.variance, s.mae)).collect();
    ols(&pairs)
}

pub fn ols(pairs: &[(f64, f64)]) -> Result<LinearFit> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateFit);
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = pairs.iter().fold((0.0, 0.0), |(sxx, sxy), &(x, y)| {
        (sxx + (x - mx) * (x - mx), sxy + (x - mx) * (y - my))
    });
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation across folds; needs two or more folds.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub rows: Vec<SummaryRow>,
}

pub const SUMMARY_METRICS: [&str; 4] = ["MSE", "MAE", "90th percentile MAE", "99th percentile MAE"];

/// Mean and sample SD of each model-level metric across folds.
pub fn cv_summary(fold_reports: &[MetricsReport]) -> CvSummary {
    let pick: [fn(&MetricsReport) -> f64; 4] = [|r| r.mse, |r| r.mae, |r| r.p90_mae, |r| r.p99_mae];
    let rows = SUMMARY_METRICS
        .iter()
        .zip(pick)
        .map(|(name, f)| {
            let v: Vec<f64> = fold_reports.iter().map(f).collect();
            let (mean, sd) = if v.is_empty() {
                (f64::NAN, None)
            } else {
                let m = mean(&v);
                let sd = (v.len() >= 2).then(|| {
                    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                });
                (m, sd)
            };
            SummaryRow {
                metric: name.to_string(),
                mean,
                sd,
            }
        })
        .collect();
    CvSummary {
        folds: fold_reports.len(),
        rows,
    }
}

impl CvSummary {
    /// `metric,mean,sd,table` with the table column as `mean (sd)` to two
    /// decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,sd,table\n");
        for r in &self.rows {
            let sd = r.sd.map(|s| s.to_string()).unwrap_or_default();
            let table = match r.sd {
                Some(s) => format!("{:.2} ({:.2})", r.mean, s),
                None => format!("{:.2}", r.mean),
            };
            let _ = writeln!(out, "{},{},{},{}", r.metric, r.mean, sd, table);
        }
        out
    }
}
