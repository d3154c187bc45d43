mod common;

use std::time::Duration;

use common::MOCK;
use icpcast_core::forecast::{external_finetune, external_forecast, AdapterEndpoint};
use icpcast_core::segment::pad_fixed;
use icpcast_core::{Error, RecordingId, Segment, SegmentConfig};

fn segments(n: usize, fixed_len: usize) -> Vec<Segment> {
    let cfg = SegmentConfig {
        fixed_len,
        ..SegmentConfig::default()
    };
    (0..n)
        .map(|i| {
            let rec = format!("R{}", i % 7);
            let seg = Segment {
                id: RecordingId {
                    site: Some("s".into()),
                    ..RecordingId::new(format!("P{}", i % 7), rec)
                },
                seg_index: i,
                x: (0..cfg.in_len)
                    .map(|t| ((i * 31 + t) % 23) as f64 * 0.1)
                    .collect(),
                y: vec![1.0; cfg.out_len],
                x_padded: Vec::new(),
                mask: Vec::new(),
            };
            pad_fixed(seg, &cfg).unwrap()
        })
        .collect()
}

fn mock(args: &str) -> AdapterEndpoint {
    AdapterEndpoint::shell(&format!("{MOCK} {args}")).with_timeout(Duration::from_secs(20))
}

#[test]
fn echo_preserves_count_order_and_ids() {
    let segs = segments(100, 512);
    let preds = external_forecast(&segs, &mock("--echo")).unwrap();
    assert_eq!(preds.len(), 100);
    for (s, p) in segs.iter().zip(&preds) {
        assert_eq!(p.key, s.key());
        assert_eq!(p.y_hat, vec![*s.x.last().unwrap(); s.y.len()]);
    }
}

#[test]
fn out_of_order_answers_are_matched() {
    let segs = segments(100, 512);
    let forward = external_forecast(&segs, &mock("--echo")).unwrap();
    let reversed = external_forecast(&segs, &mock("--echo --reverse")).unwrap();
    assert_eq!(forward, reversed);
}

#[test]
fn padding_length_does_not_change_predictions() {
    let a = external_forecast(&segments(20, 512), &mock("")).unwrap();
    let b = external_forecast(&segments(20, 64), &mock("")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_length_is_rejected() {
    let err = external_forecast(&segments(3, 512), &mock("--bad-length")).unwrap_err();
    assert!(
        matches!(
            err,
            Error::BadPrediction {
                got: 31,
                expected: 30,
                ..
            }
        ),
        "{err:?}"
    );
}

#[test]
fn silent_adapter_times_out() {
    let ep = mock("--stall-ms 5000").with_timeout(Duration::from_millis(300));
    let err = external_forecast(&segments(2, 512), &ep).unwrap_err();
    assert!(matches!(err, Error::AdapterTimeout(_)), "{err:?}");
}

#[test]
fn adapter_error_line_is_reported() {
    let err = external_forecast(&segments(2, 512), &mock("--fail")).unwrap_err();
    assert!(
        matches!(err, Error::AdapterProtocol(ref m) if m.contains("mock failure")),
        "{err:?}"
    );
}

#[test]
fn missing_adapter_is_a_protocol_error() {
    let ep = AdapterEndpoint::shell("/nonexistent/adapter").with_timeout(Duration::from_secs(5));
    let err = external_forecast(&segments(2, 512), &ep).unwrap_err();
    assert!(matches!(err, Error::AdapterProtocol(_)), "{err:?}");
}

#[test]
fn finetune_then_predict_uses_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    let ep = mock("").with_args(["--weights".to_string(), weights.display().to_string()]);
    let segs = segments(10, 512);
    let before = external_forecast(&segs, &ep).unwrap();
    let comments = external_finetune(&segs, &ep).unwrap();
    assert_eq!(comments.len(), 1);
    assert!(comments[0].starts_with("finetuned on 10 segments"));
    assert!(weights.exists());
    let after = external_forecast(&segs, &ep).unwrap();
    assert_ne!(before, after);
    // one learned offset shifts every forecast; targets are all 1.0
    let shift: Vec<f64> = before
        .iter()
        .zip(&after)
        .map(|(b, a)| a.y_hat[0] - b.y_hat[0])
        .collect();
    assert!(shift.iter().all(|d| (d - shift[0]).abs() < 1e-9));
    let mean_after = after.iter().map(|p| p.y_hat[0]).sum::<f64>() / after.len() as f64;
    assert!((mean_after - 1.0).abs() < 1e-9);
}

#[test]
fn empty_batch_needs_no_adapter() {
    let ep = AdapterEndpoint::shell("/nonexistent/adapter");
    assert!(external_forecast(&[], &ep).unwrap().is_empty());
}
