//! On-disk formats.
//!
//! * raw recording: CSV `time_s,icp_mmhg`, an empty value is a missing sample
//! * dataset manifest: JSON array of [`ManifestEntry`]
//! * clean signal: CSV `minute,icp_mmhg`, listed by a [`CleanManifest`]
//! * segments / predictions: one JSON object per line
//! * checkpoint: versioned JSON [`Checkpoint`]

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{score_segment, SegmentScore};
use crate::forecast::external::SegmentRecord;
use crate::forecast::{ForecastResult, LstmParams};
use crate::train::TrainConfig;
use crate::types::{
    CleanSignal, Dataset, MonitorType, PreprocessConfig, RawRecording, RecordingId, Sample,
    ScalerStats, Segment, SegmentConfig, SegmentKey,
};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CLEAN_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub recording_id: String,
    #[serde(default)]
    pub site: Option<String>,
    pub monitor_type: MonitorType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_trim_minute: Option<usize>,
    /// CSV path relative to the manifest; defaults to `<recording_id>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl ManifestEntry {
    pub fn recording(&self) -> RecordingId {
        RecordingId {
            patient_id: self.patient_id.clone(),
            recording_id: self.recording_id.clone(),
            site: self.site.clone(),
            monitor_type: self.monitor_type,
        }
    }

    pub fn csv_path(&self, dir: &Path) -> PathBuf {
        match &self.file {
            Some(f) => dir.join(f),
            None => dir.join(format!("{}.csv", self.recording_id)),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestDoc {
    List(Vec<ManifestEntry>),
    Wrapped { recordings: Vec<ManifestEntry> },
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let entries = match read_json::<ManifestDoc>(path)? {
        ManifestDoc::List(v) => v,
        ManifestDoc::Wrapped { recordings } => recordings,
    };
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(&e.recording_id) {
            return Err(Error::format(
                path,
                format!("duplicate recording {}", e.recording_id),
            ));
        }
    }
    Ok(entries)
}

pub fn read_raw_csv(path: &Path, id: RecordingId) -> Result<RawRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e))?
        .clone();
    if headers.len() < 2 || &headers[0] != "time_s" || &headers[1] != "icp_mmhg" {
        return Err(Error::format(path, "expected header time_s,icp_mmhg"));
    }
    let mut samples = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: {what}", line + 2));
        let time: f64 = row
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad("bad time"))?;
        let value = match row.get(1).unwrap_or("") {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("bad value"))?),
        };
        samples.push(Sample { time, value });
    }
    let rec = RawRecording {
        id,
        samples,
        nominal_rate: None,
    };
    rec.validate().map_err(|e| Error::format(path, e))?;
    Ok(rec)
}

pub fn write_raw_csv(path: &Path, rec: &RawRecording) -> Result<()> {
    write_lines(
        path,
        "time_s,icp_mmhg",
        rec.samples.iter().map(|s| match s.value {
            Some(v) => format!("{},{}", s.time, v),
            None => format!("{},", s.time),
        }),
    )
}

fn write_lines<I: IntoIterator<Item = String>>(path: &Path, header: &str, lines: I) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for l in lines {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_clean_csv(path: &Path, sig: &CleanSignal) -> Result<()> {
    write_lines(
        path,
        "minute,icp_mmhg",
        sig.values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{},{}", sig.start_minute + i as i64, v)),
    )
}

pub fn read_clean_csv(path: &Path, id: RecordingId) -> Result<CleanSignal> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    let mut values = Vec::new();
    let mut start_minute = None;
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e))?;
        let bad = || Error::format(path, format!("row {}", line + 2));
        let minute: i64 = row.get(0).unwrap_or("").parse().map_err(|_| bad())?;
        let v: f64 = row.get(1).unwrap_or("").parse().map_err(|_| bad())?;
        let first = *start_minute.get_or_insert(minute);
        if minute != first + values.len() as i64 || !v.is_finite() {
            return Err(bad());
        }
        values.push(v);
    }
    Ok(CleanSignal {
        id,
        values,
        start_minute: start_minute.unwrap_or(0),
    })
}

/// Index of a directory of clean signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanManifest {
    pub config_hash: String,
    pub preprocess: PreprocessConfig,
    pub recordings: Vec<RecordingId>,
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &dataset.signals {
        write_clean_csv(&dir.join(format!("{}.csv", s.id.recording_id)), s)?;
    }
    write_json(
        &dir.join(CLEAN_MANIFEST),
        &CleanManifest {
            config_hash: config_hash.to_string(),
            preprocess: dataset.preprocess.clone(),
            recordings: dataset.signals.iter().map(|s| s.id.clone()).collect(),
        },
    )
}

/// Loads a clean-signal directory; returns the dataset and the config hash
/// it was produced with.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, String)> {
    let manifest: CleanManifest = read_json(&dir.join(CLEAN_MANIFEST))?;
    let signals = manifest
        .recordings
        .iter()
        .map(|id| read_clean_csv(&dir.join(format!("{}.csv", id.recording_id)), id.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Dataset::new(manifest.preprocess, signals)?,
        manifest.config_hash,
    ))
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_segments(path: &Path, segments: &[Segment]) -> Result<()> {
    let records: Vec<SegmentRecord> = segments
        .iter()
        .map(|s| SegmentRecord::from_segment(s, true))
        .collect();
    write_ndjson(path, &records)
}

pub fn read_segments(path: &Path) -> Result<Vec<Segment>> {
    read_ndjson::<SegmentRecord>(path)?
        .into_iter()
        .map(|r| r.into_segment().map_err(|e| Error::format(path, e)))
        .collect()
}

/// A forecast stored next to the segment it was made for, in mm Hg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub key: SegmentKey,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(seg: &Segment, pred: &ForecastResult) -> Result<Self> {
        if seg.key() != pred.key {
            return Err(Error::ShapeError(
                "prediction does not match its segment".into(),
            ));
        }
        Ok(Self {
            key: pred.key.clone(),
            x: seg.x.clone(),
            y: seg.y.clone(),
            y_hat: pred.y_hat.clone(),
        })
    }

    pub fn score(&self) -> Result<SegmentScore> {
        Ok(score_segment(&self.y, &self.y_hat)?
            .with_key(self.key.clone())
            .with_history(&self.x, &self.y))
    }
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    write_ndjson(path, preds)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_ndjson(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub params: LstmParams,
    pub scaler: ScalerStats,
    pub train: TrainConfig,
    pub segment: SegmentConfig,
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            ),
        ));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn raw_csv_with_missing_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        fs::write(&p, "time_s,icp_mmhg\n0,10.5\n0.02,\n0.04, 11\n").unwrap();
        let rec = read_raw_csv(&p, RecordingId::new("p", "r")).unwrap();
        assert_eq!(rec.samples.len(), 3);
        assert_eq!(rec.samples[1].value, None);
        assert_eq!(rec.samples[2].value, Some(11.0));
        fs::write(&p, "time_s,icp_mmhg\n0,abc\n").unwrap();
        assert!(matches!(
            read_raw_csv(&p, RecordingId::new("p", "r")),
            Err(Error::Format { .. })
        ));
        fs::write(&p, "t,v\n0,1\n").unwrap();
        assert!(read_raw_csv(&p, RecordingId::new("p", "r")).is_err());
    }

    #[test]
    fn manifest_forms() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(
            &p,
            r#"[{"patient_id":"A","recording_id":"a1","site":"s1","monitor_type":"intraparenchymal","manual_trim_minute":300}]"#,
        )
        .unwrap();
        let m = read_manifest(&p).unwrap();
        assert_eq!(m[0].manual_trim_minute, Some(300));
        assert_eq!(m[0].csv_path(dir.path()), dir.path().join("a1.csv"));
        fs::write(
            &p,
            r#"{"recordings":[{"patient_id":"A","recording_id":"a1","monitor_type":"ventricular","file":"x/y.csv"}]}"#,
        )
        .unwrap();
        let m = read_manifest(&p).unwrap();
        assert_eq!(m[0].monitor_type, MonitorType::Ventricular);
        assert_eq!(m[0].csv_path(dir.path()), dir.path().join("x/y.csv"));
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let mut ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: "x".into(),
            params: LstmParams::zeros(2),
            scaler: ScalerStats {
                mean: 1.0,
                std: 2.0,
            },
            train: TrainConfig::default(),
            segment: SegmentConfig::default(),
        };
        write_json(&p, &ck).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), ck);
        ck.format_version = 99;
        write_json(&p, &ck).unwrap();
        assert!(read_checkpoint(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dataset_round_trip(values in prop::collection::vec(-5.0f64..50.0, 1..50), start in -100i64..100) {
            let dir = tempfile::tempdir().unwrap();
            let sig = CleanSignal {
                id: RecordingId { site: Some("s".into()), ..RecordingId::new("A", "a1") },
                values,
                start_minute: start,
            };
            let ds = Dataset::new(PreprocessConfig::default(), vec![sig]).unwrap();
            write_dataset(dir.path(), &ds, "h").unwrap();
            let (back, hash) = read_dataset(dir.path()).unwrap();
            prop_assert_eq!(back, ds);
            prop_assert_eq!(hash, "h");
        }

        #[test]
        fn segment_file_round_trip(x in prop::collection::vec(-3.0f64..3.0, 1..20), y in prop::collection::vec(-3.0f64..3.0, 1..10)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.jsonl");
            let cfg = SegmentConfig { in_len: x.len(), out_len: y.len(), stride: 1, fixed_len: 24 };
            let seg = crate::segment::pad_fixed(Segment {
                id: RecordingId::new("A", "a1"),
                seg_index: 3,
                x, y, x_padded: vec![], mask: vec![],
            }, &cfg).unwrap();
            write_segments(&p, std::slice::from_ref(&seg)).unwrap();
            prop_assert_eq!(read_segments(&p).unwrap(), vec![seg]);
        }
    }
}
