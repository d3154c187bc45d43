//! Patient-grouped cross-validation and the retrain-on-everything external
//! validation run.
//!
//! Within a fold only training patients' values reach the scaler and the
//! optimizer. Validation signals are scaled with the training statistics
//! and used for evaluation and the validation loss curve only.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{aggregate, cv_summary, CvSummary, MetricsReport};
use crate::forecast::{
    external_finetune, external_forecast, forecast_segments, AdapterEndpoint, EsConfig,
    ForecastResult, LstmParams,
};
use crate::io::PredictionRecord;
use crate::preprocess::fit_scaler;
use crate::segment::segment_signal;
use crate::train::{train, LossCurve, TrainConfig};
use crate::types::{CleanSignal, Dataset, ScalerStats, Segment, SegmentConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train_patients: BTreeSet<String>,
    pub val_patients: BTreeSet<String>,
}

/// Seeded partition of patients into `k` folds whose sizes differ by at
/// most one. Fold `i` validates on partition `i` and trains on the rest.
pub fn make_folds(patients: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    let mut unique: Vec<String> = patients.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() < k {
        return Err(Error::TooFewPatients {
            patients: unique.len(),
            folds: k,
        });
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let all: BTreeSet<String> = unique.iter().cloned().collect();
    Ok((0..k)
        .map(|fold| {
            let val: BTreeSet<String> = unique.iter().skip(fold).step_by(k).cloned().collect();
            FoldSplit {
                fold,
                train_patients: all.difference(&val).cloned().collect(),
                val_patients: val,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Es(EsConfig),
    Lstm {
        hidden: usize,
        train: TrainConfig,
    },
    External {
        command: String,
        /// Fine-tune on the training segments before predicting.
        finetune: bool,
        timeout_secs: u64,
        /// Where the adapter keeps fine-tuned weights (`--weights`).
        weights_dir: Option<PathBuf>,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Es(_) => "es",
            ModelSpec::Lstm { .. } => "lstm",
            ModelSpec::External { .. } => "external",
        }
    }
}

/// A model ready to forecast, in scaled space.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Es(EsConfig),
    Lstm(LstmParams),
    External(AdapterEndpoint),
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub scaler: ScalerStats,
    pub model: FittedModel,
    pub loss_curve: Option<LossCurve>,
    pub diverged: bool,
}

/// Rejects any signal whose patient is not in `allowed`.
pub fn check_provenance<'a>(
    signals: impl IntoIterator<Item = &'a CleanSignal>,
    allowed: &BTreeSet<String>,
) -> Result<()> {
    for s in signals {
        if !allowed.contains(&s.id.patient_id) {
            return Err(Error::Leakage(s.id.patient_id.clone()));
        }
    }
    Ok(())
}

fn scaled_segments(
    signals: &[&CleanSignal],
    scaler: &ScalerStats,
    cfg: &SegmentConfig,
) -> Result<Vec<Segment>> {
    let per_signal: Vec<Vec<Segment>> = signals
        .par_iter()
        .map(|s| segment_signal(&scaler.apply_signal(s), cfg))
        .collect::<Result<_>>()?;
    Ok(per_signal.into_iter().flatten().collect())
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ (stream.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits the scaler and the model on `train_signals`. `monitor_signals` only
/// feed the LSTM's validation loss curve. `label` names adapter weight files.
pub fn fit_model(
    train_signals: &[&CleanSignal],
    monitor_signals: &[&CleanSignal],
    spec: &ModelSpec,
    seg_cfg: &SegmentConfig,
    seed: u64,
    label: &str,
) -> Result<Fitted> {
    let scaler = fit_scaler(train_signals.iter().copied())?;
    let (model, loss_curve, diverged) = match spec {
        ModelSpec::Es(cfg) => (FittedModel::Es(*cfg), None, false),
        ModelSpec::Lstm { hidden, train: tc } => {
            let train_segs = scaled_segments(train_signals, &scaler, seg_cfg)?;
            let monitor_segs = scaled_segments(monitor_signals, &scaler, seg_cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
            let init = LstmParams::init(*hidden, &mut rng);
            let cfg = TrainConfig {
                seed: derive_seed(seed, 1),
                ..tc.clone()
            };
            let out = train(init, &train_segs, &monitor_segs, &cfg)?;
            (FittedModel::Lstm(out.params), Some(out.curve), out.diverged)
        }
        ModelSpec::External {
            command,
            finetune,
            timeout_secs,
            weights_dir,
        } => {
            let mut endpoint =
                AdapterEndpoint::shell(command).with_timeout(Duration::from_secs(*timeout_secs));
            if let Some(dir) = weights_dir {
                let path = dir.join(format!("{label}.weights"));
                endpoint =
                    endpoint.with_args(["--weights".to_string(), path.display().to_string()]);
            }
            if *finetune {
                let train_segs = scaled_segments(train_signals, &scaler, seg_cfg)?;
                external_finetune(&train_segs, &endpoint)?;
            }
            (FittedModel::External(endpoint), None, false)
        }
    };
    Ok(Fitted {
        scaler,
        model,
        loss_curve,
        diverged,
    })
}

fn predict(model: &FittedModel, segments: &[Segment]) -> Result<Vec<ForecastResult>> {
    match model {
        FittedModel::Es(cfg) => forecast_segments(cfg, segments),
        FittedModel::Lstm(p) => forecast_segments(p, segments),
        FittedModel::External(endpoint) => external_forecast(segments, endpoint),
    }
}

/// Forecasts every segment of `signals`; records are in mm Hg.
pub fn predict_signals(
    fitted: &Fitted,
    signals: &[&CleanSignal],
    seg_cfg: &SegmentConfig,
) -> Result<Vec<PredictionRecord>> {
    let scaled = scaled_segments(signals, &fitted.scaler, seg_cfg)?;
    let original: Vec<Segment> = signals
        .iter()
        .map(|s| segment_signal(s, seg_cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let preds = predict(&fitted.model, &scaled)?;
    original
        .iter()
        .zip(preds)
        .map(|(seg, p)| {
            let p = ForecastResult {
                y_hat: fitted.scaler.invert_all(&p.y_hat),
                ..p
            };
            PredictionRecord::new(seg, &p)
        })
        .collect()
}

/// Forecasts every segment of `signals` and scores it in mm Hg.
pub fn evaluate(
    fitted: &Fitted,
    signals: &[&CleanSignal],
    seg_cfg: &SegmentConfig,
) -> Result<MetricsReport> {
    let scores = predict_signals(fitted, signals, seg_cfg)?
        .iter()
        .map(PredictionRecord::score)
        .collect::<Result<Vec<_>>>()?;
    aggregate(scores)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub split: FoldSplit,
    pub scaler: ScalerStats,
    pub validation: Option<MetricsReport>,
    pub training: Option<MetricsReport>,
    pub loss_curve: Option<LossCurve>,
    pub diverged: bool,
    #[serde(skip)]
    pub params: Option<LstmParams>,
}

fn partition<'a>(ds: &'a Dataset, patients: &BTreeSet<String>) -> Vec<&'a CleanSignal> {
    ds.signals
        .iter()
        .filter(|s| patients.contains(&s.id.patient_id))
        .collect()
}

/// Fits on the fold's training patients and evaluates both sides.
pub fn run_fold(
    dataset: &Dataset,
    split: &FoldSplit,
    spec: &ModelSpec,
    seg_cfg: &SegmentConfig,
    seed: u64,
) -> Result<FoldOutcome> {
    if !split.train_patients.is_disjoint(&split.val_patients) {
        let p = split
            .train_patients
            .intersection(&split.val_patients)
            .next()
            .unwrap();
        return Err(Error::Leakage(p.clone()));
    }
    let train_signals = partition(dataset, &split.train_patients);
    let val_signals = partition(dataset, &split.val_patients);
    check_provenance(train_signals.iter().copied(), &split.train_patients)?;

    let fold_seed = derive_seed(seed, split.fold as u64 + 100);
    let fitted = fit_model(
        &train_signals,
        &val_signals,
        spec,
        seg_cfg,
        fold_seed,
        &format!("fold{}", split.fold),
    )?;
    let score = |signals: &[&CleanSignal]| match evaluate(&fitted, signals, seg_cfg) {
        Ok(r) => Ok(Some(r)),
        Err(Error::NumericalDivergence(_)) if fitted.diverged => Ok(None),
        Err(e) => Err(e),
    };
    Ok(FoldOutcome {
        split: split.clone(),
        scaler: fitted.scaler,
        validation: score(&val_signals)?,
        training: score(&train_signals)?,
        loss_curve: fitted.loss_curve.clone(),
        diverged: fitted.diverged,
        params: match fitted.model {
            FittedModel::Lstm(p) => Some(p),
            _ => None,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvOutcome {
    pub model: String,
    pub folds: Vec<FoldOutcome>,
    pub validation_summary: CvSummary,
    pub training_summary: CvSummary,
}

/// Runs every fold (in parallel) and summarises across folds. Diverged
/// folds without a usable report are left out of the summaries.
pub fn run_cv(
    dataset: &Dataset,
    spec: &ModelSpec,
    seg_cfg: &SegmentConfig,
    k: usize,
    seed: u64,
) -> Result<CvOutcome> {
    let splits = make_folds(&dataset.patients(), k, seed)?;
    let run = |s: &FoldSplit| run_fold(dataset, s, spec, seg_cfg, seed);
    let folds: Vec<FoldOutcome> = if matches!(spec, ModelSpec::External { .. }) {
        // one adapter session at a time
        splits.iter().map(run).collect::<Result<_>>()?
    } else {
        splits.par_iter().map(run).collect::<Result<_>>()?
    };
    let collect = |f: fn(&FoldOutcome) -> Option<&MetricsReport>| -> Vec<MetricsReport> {
        folds.iter().filter_map(f).cloned().collect()
    };
    let validation_summary = cv_summary(&collect(|f| f.validation.as_ref()));
    let training_summary = cv_summary(&collect(|f| f.training.as_ref()));
    Ok(CvOutcome {
        model: spec.name().to_string(),
        folds,
        validation_summary,
        training_summary,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub model: String,
    pub scaler: ScalerStats,
    pub training: MetricsReport,
    pub external: MetricsReport,
    pub loss_curve: Option<LossCurve>,
    pub diverged: bool,
    #[serde(skip)]
    pub params: Option<LstmParams>,
}

/// Fits on the whole internal dataset and evaluates, unchanged, on the
/// external one.
pub fn retrain_all_and_validate(
    internal: &Dataset,
    external: &Dataset,
    spec: &ModelSpec,
    seg_cfg: &SegmentConfig,
    seed: u64,
) -> Result<RetrainOutcome> {
    if internal.preprocess != external.preprocess {
        return Err(Error::DatasetMismatch);
    }
    let train_signals: Vec<&CleanSignal> = internal.signals.iter().collect();
    let external_signals: Vec<&CleanSignal> = external.signals.iter().collect();
    let fitted = fit_model(
        &train_signals,
        &[],
        spec,
        seg_cfg,
        derive_seed(seed, 7),
        "all",
    )?;
    Ok(RetrainOutcome {
        model: spec.name().to_string(),
        scaler: fitted.scaler,
        training: evaluate(&fitted, &train_signals, seg_cfg)?,
        external: evaluate(&fitted, &external_signals, seg_cfg)?,
        loss_curve: fitted.loss_curve.clone(),
        diverged: fitted.diverged,
        params: match fitted.model {
            FittedModel::Lstm(p) => Some(p),
            _ => None,
        },
    })
}
