use std::collections::BTreeMap;

use icpcast_core::cv::run_cv;
use icpcast_core::cv::ModelSpec;
use icpcast_core::forecast::{forecast_segments, EsConfig, Persistence};
use icpcast_core::io::{read_dataset, write_dataset, PredictionRecord};
use icpcast_core::preprocess::{screen_recording, Exclusion, Screening};
use icpcast_core::segment::segment_signal;
use icpcast_core::synth::raw_recording;
use icpcast_core::{aggregate, Dataset, MonitorType, PreprocessConfig, RecordingId, SegmentConfig};

fn wave(t: f64) -> Option<f64> {
    Some(15.0 + 5.0 * (t / 900.0).sin() + 0.5 * (t * 6.0).sin())
}

#[test]
fn raw_to_metrics() {
    let cfg = PreprocessConfig::default();
    let trims: BTreeMap<String, usize> = [("b1".to_string(), 150)].into();
    let raws = [
        raw_recording(RecordingId::new("A", "a1"), 3.0 * 3600.0, 50.0, wave),
        raw_recording(RecordingId::new("B", "b1"), 4.0 * 3600.0, 50.0, wave),
        raw_recording(RecordingId::new("C", "c1"), 100.0 * 60.0, 50.0, wave),
        raw_recording(
            RecordingId {
                monitor_type: MonitorType::Ventricular,
                ..RecordingId::new("D", "d1")
            },
            3.0 * 3600.0,
            50.0,
            wave,
        ),
    ];
    let mut signals = Vec::new();
    let mut excluded = Vec::new();
    for raw in &raws {
        match screen_recording(raw, &cfg, &trims).unwrap() {
            Screening::Accepted { signal, .. } => signals.push(signal),
            Screening::Excluded(e) => excluded.push((raw.id.recording_id.clone(), e)),
        }
    }
    assert_eq!(
        signals.iter().map(|s| s.len()).collect::<Vec<_>>(),
        [180, 150]
    );
    assert!(matches!(excluded[0], (ref r, Exclusion::BelowMinDuration { .. }) if r == "c1"));
    assert!(matches!(excluded[1], (ref r, Exclusion::MonitorType { .. }) if r == "d1"));

    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(cfg, signals).unwrap();
    write_dataset(dir.path(), &ds, "abc").unwrap();
    let (ds, _) = read_dataset(dir.path()).unwrap();

    let seg_cfg = SegmentConfig::default();
    let segments: Vec<_> = ds
        .signals
        .iter()
        .flat_map(|s| segment_signal(s, &seg_cfg).unwrap())
        .collect();
    assert_eq!(segments.len(), 19 + 13);

    let score = |preds: Vec<_>| {
        let scores = segments
            .iter()
            .zip(&preds)
            .map(|(s, p)| PredictionRecord::new(s, p).unwrap().score().unwrap())
            .collect();
        aggregate(scores).unwrap()
    };
    let es = score(forecast_segments(&EsConfig::default(), &segments).unwrap());
    let last = score(forecast_segments(&Persistence, &segments).unwrap());
    assert_eq!(es.n_patients, 2);
    assert_eq!(es.n_segments, 32);
    assert!(es.mae.is_finite() && es.mae > 0.0);
    assert!(es.p90_mae <= es.p99_mae);
    assert!(last.mae.is_finite());

    let oracle = score(
        segments
            .iter()
            .map(|s| icpcast_core::ForecastResult {
                key: s.key(),
                y_hat: s.y.clone(),
            })
            .collect(),
    );
    assert_eq!((oracle.mae, oracle.mse, oracle.p99_mae), (0.0, 0.0, 0.0));
}

#[test]
fn cv_reports_one_outcome_per_fold() {
    let ds = icpcast_core::synth::sine_dataset(&Default::default(), 7, 200, 4).unwrap();
    let out = run_cv(
        &ds,
        &ModelSpec::Es(EsConfig::default()),
        &SegmentConfig::default(),
        3,
        9,
    )
    .unwrap();
    assert_eq!(out.folds.len(), 3);
    assert_eq!(out.validation_summary.folds, 3);
    let sizes: Vec<usize> = out
        .folds
        .iter()
        .map(|f| f.split.val_patients.len())
        .collect();
    assert_eq!(sizes.iter().sum::<usize>(), 7);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let again = run_cv(
        &ds,
        &ModelSpec::Es(EsConfig::default()),
        &SegmentConfig::default(),
        3,
        9,
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&out).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}
