//! Report tables shared by `cv`, `evaluate`, `external` and `report`.

use std::path::Path;

use anyhow::{Context, Result};
use icpcast_core::eval::{cv_summary, ols, MetricsReport};
use icpcast_core::train::LossCurve;

pub const SUMMARY: &str = "summary.csv";
pub const SUMMARY_TRAINING: &str = "summary_training.csv";
pub const PER_PATIENT: &str = "per_patient.csv";
pub const PER_RECORDING: &str = "per_recording.csv";
pub const VARIANCE_MAE: &str = "variance_mae.csv";
pub const VARIANCE_FIT: &str = "variance_fit.csv";
pub const LOSS_CURVES: &str = "loss_curves.csv";

/// Reports and curves keyed by a group label (fold index, `all`, ...).
#[derive(Debug, Default)]
pub struct Tables<'a> {
    pub validation: Vec<(String, &'a MetricsReport)>,
    pub training: Vec<(String, &'a MetricsReport)>,
    pub curves: Vec<(String, &'a LossCurve)>,
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_csv<R>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every table that has data; returns the file names written.
pub fn write_tables(out: &Path, t: &Tables<'_>) -> Result<Vec<&'static str>> {
    let mut written = Vec::new();
    let summary = |reports: &[(String, &MetricsReport)]| {
        let owned: Vec<MetricsReport> = reports.iter().map(|(_, r)| (*r).clone()).collect();
        cv_summary(&owned).to_csv()
    };
    if !t.validation.is_empty() {
        std::fs::write(out.join(SUMMARY), summary(&t.validation))?;
        written.push(SUMMARY);
    }
    if !t.training.is_empty() {
        std::fs::write(out.join(SUMMARY_TRAINING), summary(&t.training))?;
        written.push(SUMMARY_TRAINING);
    }
    if !t.validation.is_empty() {
        write_group_tables(out, &t.validation)?;
        written.extend([PER_PATIENT, PER_RECORDING, VARIANCE_MAE, VARIANCE_FIT]);
    }
    if !t.curves.is_empty() {
        write_csv(
            &out.join(LOSS_CURVES),
            &["fold", "epoch", "train_loss", "validation_loss"],
            t.curves.iter().flat_map(|(label, c)| {
                c.train.iter().enumerate().map(move |(e, &l)| {
                    vec![
                        label.clone(),
                        (e + 1).to_string(),
                        num(l),
                        opt(c.validation.get(e).copied().flatten()),
                    ]
                })
            }),
        )?;
        written.push(LOSS_CURVES);
    }
    Ok(written)
}

fn write_group_tables(out: &Path, reports: &[(String, &MetricsReport)]) -> Result<()> {
    write_csv(
        &out.join(PER_PATIENT),
        &[
            "fold",
            "patient_id",
            "n_segments",
            "mae",
            "mse",
            "mean_variance",
        ],
        reports.iter().flat_map(|(label, r)| {
            r.patients.iter().map(move |g| {
                vec![
                    label.clone(),
                    g.patient_id.clone(),
                    g.n_segments.to_string(),
                    num(g.mae),
                    num(g.mse),
                    num(g.mean_variance),
                ]
            })
        }),
    )?;
    write_csv(
        &out.join(PER_RECORDING),
        &[
            "fold",
            "patient_id",
            "recording_id",
            "n_segments",
            "mae",
            "mse",
            "mean_variance",
        ],
        reports.iter().flat_map(|(label, r)| {
            r.recordings.iter().map(move |g| {
                vec![
                    label.clone(),
                    g.patient_id.clone(),
                    g.recording_id.clone().unwrap_or_default(),
                    g.n_segments.to_string(),
                    num(g.mae),
                    num(g.mse),
                    num(g.mean_variance),
                ]
            })
        }),
    )?;
    write_csv(
        &out.join(VARIANCE_MAE),
        &[
            "fold",
            "patient_id",
            "recording_id",
            "seg_index",
            "variance",
            "input_variance",
            "window_variance",
            "mae",
            "mse",
        ],
        reports.iter().flat_map(|(label, r)| {
            r.segments.iter().map(move |s| {
                vec![
                    label.clone(),
                    s.key.patient_id.clone(),
                    s.key.recording_id.clone(),
                    s.key.seg_index.to_string(),
                    num(s.variance),
                    opt(s.input_variance),
                    opt(s.window_variance),
                    num(s.mae),
                    num(s.mse),
                ]
            })
        }),
    )?;
    let pooled: Vec<(f64, f64)> = reports
        .iter()
        .flat_map(|(_, r)| r.segments.iter().map(|s| (s.variance, s.mae)))
        .collect();
    let fit_row = |label: String, fit: Option<(f64, f64)>, n: usize| {
        let (slope, intercept) = match fit {
            Some((s, i)) => (num(s), num(i)),
            None => (String::new(), String::new()),
        };
        vec![label, n.to_string(), slope, intercept]
    };
    let mut rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            fit_row(
                label.clone(),
                r.variance_fit.map(|f| (f.slope, f.intercept)),
                r.n_segments,
            )
        })
        .collect();
    if reports.len() > 1 {
        let fit = ols(&pooled).ok().map(|f| (f.slope, f.intercept));
        rows.push(fit_row("pooled".into(), fit, pooled.len()));
    }
    write_csv(
        &out.join(VARIANCE_FIT),
        &["fold", "n_segments", "slope", "intercept"],
        rows,
    )
}
