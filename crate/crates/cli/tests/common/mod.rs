#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icpcast_core::io::{write_dataset, write_json, write_raw_csv, ManifestEntry};
use icpcast_core::synth::{raw_recording, sine_dataset, SineMix};
use icpcast_core::{MonitorType, RecordingId};

pub const BIN: &str = env!("CARGO_BIN_EXE_icpcast");
pub const MOCK: &str = env!("CARGO_BIN_EXE_icpcast-mock-adapter");

pub fn icpcast(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("icpcast runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = icpcast(args);
    assert!(
        out.status.success(),
        "icpcast {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small-model configuration that keeps LSTM runs fast.
pub fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "segment": {"stride": 15},
  "lstm": {"hidden": 4},
  "train": {"epochs": 2, "batch_size": 16, "learning_rate": 0.001}
}"#,
    )
    .unwrap();
    path
}

/// Clean per-minute dataset written under `dir`.
pub fn clean_dataset(dir: &Path, patients: usize, minutes: usize, seed: u64) -> PathBuf {
    let ds = sine_dataset(&SineMix::default(), patients, minutes, seed).unwrap();
    write_dataset(dir, &ds, "synthetic").unwrap();
    dir.to_path_buf()
}

fn wave(t: f64) -> f64 {
    14.0 + 4.0 * (t / 1200.0).sin() + 0.3 * (t * 5.0).sin()
}

/// Raw 1 Hz recordings plus manifest:
/// A/a1 3 h accepted; A/a2 4 h trimmed at 150; B/b1 100 min too short;
/// C/c1 ventricular; D/d1 malformed CSV; E/e1 3 h with gaps and spikes.
pub fn raw_dataset(dir: &Path) -> PathBuf {
    let rate = 1.0;
    let entry = |p: &str, r: &str, m: MonitorType, trim: Option<usize>| ManifestEntry {
        patient_id: p.into(),
        recording_id: r.into(),
        site: Some("site1".into()),
        monitor_type: m,
        manual_trim_minute: trim,
        file: None,
    };
    let par = MonitorType::Intraparenchymal;
    let entries = vec![
        entry("A", "a1", par, None),
        entry("A", "a2", par, Some(150)),
        entry("B", "b1", par, None),
        entry("C", "c1", MonitorType::Ventricular, None),
        entry("D", "d1", par, None),
        entry("E", "e1", par, None),
    ];
    let hours = [3.0, 4.0, 100.0 / 60.0, 3.0, 0.0, 3.0];
    for (e, h) in entries.iter().zip(hours) {
        if e.recording_id == "d1" {
            std::fs::write(e.csv_path(dir), "time_s,icp_mmhg\n0,12\n1,twelve\n").unwrap();
            continue;
        }
        let spiky = e.recording_id == "e1";
        let raw = raw_recording(
            RecordingId {
                site: e.site.clone(),
                ..e.recording()
            },
            h * 3600.0,
            rate,
            |t| {
                let i = t as usize;
                if spiky && i % 997 < 40 {
                    None
                } else if spiky && i.is_multiple_of(701) {
                    Some(400.0)
                } else {
                    Some(wave(t))
                }
            },
        );
        write_raw_csv(&e.csv_path(dir), &raw).unwrap();
    }
    write_json(&dir.join("manifest.json"), &entries).unwrap();
    dir.to_path_buf()
}

/// Every file under `dir` except the run log, with contents.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run.log" {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}
