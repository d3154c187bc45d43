//! One function per subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use icpcast_core::config::ExperimentConfig;
use icpcast_core::cv::{
    fit_model, predict_signals, retrain_all_and_validate, run_cv, Fitted, FittedModel, FoldOutcome,
    ModelSpec, RetrainOutcome,
};
use icpcast_core::eval::{aggregate, CvSummary, MetricsReport};
use icpcast_core::io::{
    self, read_checkpoint, read_manifest, read_predictions, write_json, write_predictions,
    Checkpoint, PredictionRecord, CHECKPOINT_VERSION,
};
use icpcast_core::preprocess::{screen_recording, Exclusion, Screening};
use icpcast_core::segment::segment_signal;
use icpcast_core::{CleanSignal, Dataset, Error, ScalerStats};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{
    Cli, Command, CvArgs, ExternalArgs, IoArgs, ModelArgs, ModelKind, PredictArgs, TrainArgs,
};
use crate::report::{self, Tables};

pub const MANIFEST: &str = "manifest.json";
pub const PREPROCESS_LOG: &str = "preprocess_log.csv";
pub const SEGMENTS: &str = "segments.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.json";
pub const CV_SUMMARY: &str = "summary.json";
pub const EXTERNAL: &str = "external.json";
pub const PROVENANCE: &str = "provenance.json";

/// Resolved configuration shared by every command.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub seed: u64,
}

impl Ctx {
    pub fn new(cli: &Cli) -> Result<Self> {
        let cfg = match &cli.config {
            Some(p) => ExperimentConfig::load(p)
                .with_context(|| format!("loading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        let hash = cfg.hash();
        let seed = cli.seed.unwrap_or(cfg.train.seed);
        Ok(Self { cfg, hash, seed })
    }

    fn load_dataset(&self, dir: &Path) -> Result<Dataset> {
        let (ds, hash) = io::read_dataset(dir)
            .with_context(|| format!("reading clean dataset {}", dir.display()))?;
        if hash != self.hash {
            warn!(
                "{} was produced with config {hash}, current config is {}",
                dir.display(),
                self.hash
            );
        }
        Ok(ds)
    }

    fn check_hash(&self, what: &Path, hash: &str) {
        if hash != self.hash {
            warn!(
                "{} was produced with config {hash}, current config is {}",
                what.display(),
                self.hash
            );
        }
    }

    fn provenance(&self, out: &Path, command: &str, model: Option<&str>) -> Result<()> {
        #[derive(Serialize)]
        struct Provenance<'a> {
            command: &'a str,
            config_hash: &'a str,
            seed: u64,
            #[serde(skip_serializing_if = "Option::is_none")]
            model: Option<&'a str>,
            config: &'a ExperimentConfig,
        }
        write_json(
            &out.join(PROVENANCE),
            &Provenance {
                command,
                config_hash: &self.hash,
                seed: self.seed,
                model,
                config: &self.cfg,
            },
        )?;
        Ok(())
    }

    fn model_spec(&self, m: &ModelArgs, out: &Path) -> Result<ModelSpec> {
        if m.adapter_cmd.is_some() && m.model != ModelKind::External {
            warn!("--adapter-cmd is ignored unless --model external");
        }
        Ok(match m.model {
            ModelKind::Es => ModelSpec::Es(self.cfg.es),
            ModelKind::Lstm => ModelSpec::Lstm {
                hidden: self.cfg.lstm.hidden,
                train: self.cfg.train.clone(),
            },
            ModelKind::External => {
                let command = m
                    .adapter_cmd
                    .clone()
                    .ok_or_else(|| anyhow!("--model external needs --adapter-cmd"))?;
                let weights_dir = out.join("adapter_weights");
                fs::create_dir_all(&weights_dir)?;
                ModelSpec::External {
                    command,
                    finetune: self.cfg.adapter.finetune,
                    timeout_secs: self.cfg.adapter.timeout_secs,
                    weights_dir: Some(weights_dir),
                }
            }
        })
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx::new(cli)?;
    fs::create_dir_all(cli.command.out_dir())
        .with_context(|| format!("creating {}", cli.command.out_dir().display()))?;
    info!(
        "icpcast {} (config {}, seed {})",
        cli.command.name(),
        ctx.hash,
        ctx.seed
    );
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(&ctx, a),
        Command::Segment(a) => cmd_segment(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Cv(a) => cmd_cv(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::External(a) => cmd_external(&ctx, a),
    }
}

struct LogRow {
    patient_id: String,
    recording_id: String,
    status: &'static str,
    minutes: Option<usize>,
    detail: String,
}

pub fn cmd_preprocess(ctx: &Ctx, a: &IoArgs) -> Result<()> {
    let manifest_path = a.input.join(MANIFEST);
    let entries = read_manifest(&manifest_path).context("unreadable manifest")?;
    let trims: BTreeMap<String, usize> = entries
        .iter()
        .filter_map(|e| e.manual_trim_minute.map(|m| (e.recording_id.clone(), m)))
        .collect();
    let cfg = &ctx.cfg.preprocess;

    let results: Vec<(Option<CleanSignal>, LogRow)> = entries
        .par_iter()
        .map(|e| {
            let id = e.recording();
            let screened = io::read_raw_csv(&e.csv_path(&a.input), id.clone())
                .and_then(|raw| screen_recording(&raw, cfg, &trims));
            let row = |status, minutes, detail| LogRow {
                patient_id: id.patient_id.clone(),
                recording_id: id.recording_id.clone(),
                status,
                minutes,
                detail,
            };
            match screened {
                Ok(Screening::Accepted { signal, trimmed_at }) => {
                    let detail = trimmed_at
                        .map(|m| format!("manual trim applied at minute {m}"))
                        .unwrap_or_default();
                    let r = row("accepted", Some(signal.len()), detail);
                    (Some(signal), r)
                }
                Ok(Screening::Excluded(ex)) => {
                    let minutes = match ex {
                        Exclusion::BelowMinDuration { minutes, .. } => Some(minutes),
                        _ => None,
                    };
                    (None, row("excluded", minutes, ex.to_string()))
                }
                Err(err) => (None, row("error", None, err.to_string())),
            }
        })
        .collect();

    let mut signals = Vec::new();
    let mut w = csv::Writer::from_path(a.out.join(PREPROCESS_LOG))?;
    w.write_record(["patient_id", "recording_id", "status", "minutes", "detail"])?;
    for (signal, r) in results {
        if r.status != "accepted" {
            warn!("{}: {} ({})", r.recording_id, r.status, r.detail);
        }
        w.write_record([
            r.patient_id,
            r.recording_id,
            r.status.to_string(),
            r.minutes.map(|m| m.to_string()).unwrap_or_default(),
            r.detail,
        ])?;
        signals.extend(signal);
    }
    w.flush()?;
    let n = signals.len();
    let ds = Dataset::new(cfg.clone(), signals)?;
    io::write_dataset(&a.out, &ds, &ctx.hash)?;
    ctx.provenance(&a.out, "preprocess", None)?;
    info!(
        "{n} of {} recordings accepted from {} patients",
        entries.len(),
        ds.patients().len()
    );
    Ok(())
}

pub fn cmd_segment(ctx: &Ctx, a: &IoArgs) -> Result<()> {
    let ds = ctx.load_dataset(&a.input)?;
    let per_signal: Vec<Vec<_>> = ds
        .signals
        .par_iter()
        .map(|s| segment_signal(s, &ctx.cfg.segment))
        .collect::<Result<_, _>>()?;
    let segments: Vec<_> = per_signal.into_iter().flatten().collect();
    io::write_segments(&a.out.join(SEGMENTS), &segments)?;
    ctx.provenance(&a.out, "segment", None)?;
    info!(
        "{} segments from {} recordings",
        segments.len(),
        ds.signals.len()
    );
    Ok(())
}

fn refs(ds: &Dataset) -> Vec<&CleanSignal> {
    ds.signals.iter().collect()
}

pub fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let ds = ctx.load_dataset(&a.io.input)?;
    let val = a.val.as_deref().map(|p| ctx.load_dataset(p)).transpose()?;
    if let Some(v) = &val {
        let train: BTreeSet<String> = ds.patients().into_iter().collect();
        if let Some(p) = v.patients().into_iter().find(|p| train.contains(p)) {
            return Err(Error::Leakage(p).into());
        }
    }
    let spec = ModelSpec::Lstm {
        hidden: ctx.cfg.lstm.hidden,
        train: ctx.cfg.train.clone(),
    };
    let monitor = val.as_ref().map(refs).unwrap_or_default();
    let fitted = fit_model(
        &refs(&ds),
        &monitor,
        &spec,
        &ctx.cfg.segment,
        ctx.seed,
        "all",
    )?;
    let FittedModel::Lstm(params) = &fitted.model else {
        unreachable!("lstm spec yields lstm params")
    };
    write_json(
        &a.io.out.join(CHECKPOINT),
        &Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: ctx.hash.clone(),
            params: params.clone(),
            scaler: fitted.scaler,
            train: ctx.cfg.train.clone(),
            segment: ctx.cfg.segment.clone(),
        },
    )?;
    if let Some(curve) = &fitted.loss_curve {
        report::write_tables(
            &a.io.out,
            &Tables {
                curves: vec![("all".into(), curve)],
                ..Tables::default()
            },
        )?;
    }
    ctx.provenance(&a.io.out, "train", Some("lstm"))?;
    if fitted.diverged {
        return Err(Error::NumericalDivergence(
            "training diverged; checkpoint holds the last finite parameters".into(),
        )
        .into());
    }
    info!(
        "checkpoint written to {}",
        a.io.out.join(CHECKPOINT).display()
    );
    Ok(())
}

pub fn cmd_predict(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    let ds = ctx.load_dataset(&a.io.input)?;
    let spec = ctx.model_spec(&a.model, &a.io.out)?;
    let fitted = match (&spec, &a.checkpoint, &a.train) {
        (ModelSpec::Es(cfg), _, _) => Fitted {
            // forecasts are made directly in mm Hg
            scaler: ScalerStats {
                mean: 0.0,
                std: 1.0,
            },
            model: FittedModel::Es(*cfg),
            loss_curve: None,
            diverged: false,
        },
        (ModelSpec::Lstm { .. }, Some(path), _) => {
            let ck = read_checkpoint(path)?;
            ctx.check_hash(path, &ck.config_hash);
            if ck.segment != ctx.cfg.segment {
                warn!("checkpoint was trained with a different segment configuration");
            }
            Fitted {
                scaler: ck.scaler,
                model: FittedModel::Lstm(ck.params),
                loss_curve: None,
                diverged: false,
            }
        }
        (ModelSpec::Lstm { .. }, None, _) => bail!("--model lstm needs --checkpoint"),
        (ModelSpec::External { .. }, _, Some(train_dir)) => {
            let train = ctx.load_dataset(train_dir)?;
            let eval: BTreeSet<String> = ds.patients().into_iter().collect();
            if let Some(p) = train.patients().into_iter().find(|p| eval.contains(p)) {
                return Err(Error::Leakage(p).into());
            }
            fit_model(
                &refs(&train),
                &[],
                &spec,
                &ctx.cfg.segment,
                ctx.seed,
                "predict",
            )?
        }
        (ModelSpec::External { .. }, _, None) => {
            bail!("--model external needs --train for the scaler")
        }
    };
    let records = predict_signals(&fitted, &refs(&ds), &ctx.cfg.segment)?;
    write_predictions(&a.io.out.join(PREDICTIONS), &records)?;
    ctx.provenance(&a.io.out, "predict", Some(spec.name()))?;
    info!("{} predictions written", records.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config_hash: String,
    pub report: MetricsReport,
}

fn score_predictions(records: &[PredictionRecord]) -> Result<MetricsReport> {
    let scores = records
        .iter()
        .map(PredictionRecord::score)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(scores)?)
}

pub fn cmd_evaluate(ctx: &Ctx, a: &IoArgs) -> Result<()> {
    let report = score_predictions(&read_predictions(&a.input.join(PREDICTIONS))?)?;
    write_json(
        &a.out.join(METRICS),
        &MetricsFile {
            config_hash: ctx.hash.clone(),
            report: report.clone(),
        },
    )?;
    single_tables(&a.out, &report)?;
    ctx.provenance(&a.out, "evaluate", None)?;
    info!(
        "MAE {:.4}, MSE {:.4} over {} patients",
        report.mae, report.mse, report.n_patients
    );
    Ok(())
}

fn single_tables(out: &Path, report: &MetricsReport) -> Result<()> {
    report::write_tables(
        out,
        &Tables {
            validation: vec![("all".into(), report)],
            ..Tables::default()
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldFile {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub fold: FoldOutcome,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CvSummaryFile {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub folds: usize,
    pub diverged_folds: Vec<usize>,
    pub validation: CvSummary,
    pub training: CvSummary,
}

pub fn fold_file_name(i: usize) -> String {
    format!("fold_{i}.json")
}

fn fold_tables(out: &Path, folds: &[FoldOutcome]) -> Result<()> {
    let label = |f: &FoldOutcome| f.split.fold.to_string();
    report::write_tables(
        out,
        &Tables {
            validation: folds
                .iter()
                .filter_map(|f| f.validation.as_ref().map(|r| (label(f), r)))
                .collect(),
            training: folds
                .iter()
                .filter_map(|f| f.training.as_ref().map(|r| (label(f), r)))
                .collect(),
            curves: folds
                .iter()
                .filter_map(|f| f.loss_curve.as_ref().map(|c| (label(f), c)))
                .collect(),
        },
    )?;
    Ok(())
}

pub fn cmd_cv(ctx: &Ctx, a: &CvArgs) -> Result<()> {
    let ds = ctx.load_dataset(&a.io.input)?;
    let spec = ctx.model_spec(&a.model, &a.io.out)?;
    let outcome = run_cv(&ds, &spec, &ctx.cfg.segment, a.folds, ctx.seed)?;
    for f in &outcome.folds {
        write_json(
            &a.io.out.join(fold_file_name(f.split.fold)),
            &FoldFile {
                config_hash: ctx.hash.clone(),
                seed: ctx.seed,
                model: outcome.model.clone(),
                fold: f.clone(),
            },
        )?;
    }
    let diverged: Vec<usize> = outcome
        .folds
        .iter()
        .filter(|f| f.diverged)
        .map(|f| f.split.fold)
        .collect();
    write_json(
        &a.io.out.join(CV_SUMMARY),
        &CvSummaryFile {
            config_hash: ctx.hash.clone(),
            seed: ctx.seed,
            model: outcome.model.clone(),
            folds: outcome.folds.len(),
            diverged_folds: diverged.clone(),
            validation: outcome.validation_summary.clone(),
            training: outcome.training_summary.clone(),
        },
    )?;
    fold_tables(&a.io.out, &outcome.folds)?;
    ctx.provenance(&a.io.out, "cv", Some(spec.name()))?;
    for row in &outcome.validation_summary.rows {
        info!(
            "{}: {:.3} ({})",
            row.metric,
            row.mean,
            row.sd
                .map(|s| format!("{s:.3}"))
                .unwrap_or_else(|| "-".into())
        );
    }
    if !diverged.is_empty() {
        return Err(
            Error::NumericalDivergence(format!("training diverged in folds {diverged:?}")).into(),
        );
    }
    Ok(())
}

fn fold_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let idx = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("fold_")?.strip_suffix(".json")?.parse().ok());
        if let Some(i) = idx {
            found.push((i, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn cmd_report(ctx: &Ctx, a: &IoArgs) -> Result<()> {
    let folds = fold_files(&a.input)?;
    if !folds.is_empty() {
        let outcomes = folds
            .iter()
            .map(|p| {
                let f: FoldFile = io::read_json(p)?;
                ctx.check_hash(p, &f.config_hash);
                Ok(f.fold)
            })
            .collect::<Result<Vec<_>>>()?;
        fold_tables(&a.out, &outcomes)?;
        info!("report from {} folds", outcomes.len());
    } else if a.input.join(METRICS).exists() {
        let m: MetricsFile = io::read_json(&a.input.join(METRICS))?;
        ctx.check_hash(&a.input.join(METRICS), &m.config_hash);
        single_tables(&a.out, &m.report)?;
    } else if a.input.join(PREDICTIONS).exists() {
        let report = score_predictions(&read_predictions(&a.input.join(PREDICTIONS))?)?;
        single_tables(&a.out, &report)?;
    } else {
        bail!(
            "{}: no fold_*.json, {METRICS} or {PREDICTIONS} found",
            a.input.display()
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExternalFile {
    pub config_hash: String,
    pub seed: u64,
    pub outcome: RetrainOutcome,
}

pub fn cmd_external(ctx: &Ctx, a: &ExternalArgs) -> Result<()> {
    let internal = ctx.load_dataset(&a.io.input)?;
    let external = ctx.load_dataset(&a.external)?;
    let spec = ctx.model_spec(&a.model, &a.io.out)?;
    let outcome =
        retrain_all_and_validate(&internal, &external, &spec, &ctx.cfg.segment, ctx.seed)?;
    if let Some(params) = &outcome.params {
        write_json(
            &a.io.out.join(CHECKPOINT),
            &Checkpoint {
                format_version: CHECKPOINT_VERSION,
                config_hash: ctx.hash.clone(),
                params: params.clone(),
                scaler: outcome.scaler,
                train: ctx.cfg.train.clone(),
                segment: ctx.cfg.segment.clone(),
            },
        )?;
    }
    report::write_tables(
        &a.io.out,
        &Tables {
            validation: vec![("external".into(), &outcome.external)],
            training: vec![("internal".into(), &outcome.training)],
            curves: outcome
                .loss_curve
                .iter()
                .map(|c| ("all".to_string(), c))
                .collect(),
        },
    )?;
    write_json(
        &a.io.out.join(EXTERNAL),
        &ExternalFile {
            config_hash: ctx.hash.clone(),
            seed: ctx.seed,
            outcome: outcome.clone(),
        },
    )?;
    ctx.provenance(&a.io.out, "external", Some(spec.name()))?;
    info!(
        "external MAE {:.4} (internal {:.4})",
        outcome.external.mae, outcome.training.mae
    );
    if outcome.diverged {
        return Err(Error::NumericalDivergence("training diverged".into()).into());
    }
    Ok(())
}
