//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is plain data: immutable once built and `Send + Sync`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the ICP was measured. Only some monitor types are trusted for
/// training because drains interfere with the pressure reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorType {
    Intraparenchymal,
    Ventricular,
    SubarachnoidBolt,
    Other,
}

/// Identity of one recording. A patient may own several recordings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordingId {
    pub patient_id: String,
    pub recording_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    pub monitor_type: MonitorType,
}

impl RecordingId {
    pub fn new(patient_id: impl Into<String>, recording_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            recording_id: recording_id.into(),
            site: None,
            monitor_type: MonitorType::Intraparenchymal,
        }
    }
}

/// One raw sample. `value == None` is a missing reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds since recording start.
    pub time: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub id: RecordingId,
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_rate: Option<f64>,
}

impl RawRecording {
    /// Checks that times are finite and strictly increasing and that present
    /// values are finite.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyRecording);
        }
        let mut prev = f64::NEG_INFINITY;
        for (index, s) in self.samples.iter().enumerate() {
            let bad_value = s.value.is_some_and(|v| !v.is_finite());
            if !s.time.is_finite() || s.time <= prev || bad_value {
                return Err(Error::UnorderedSamples { index });
            }
            prev = s.time;
        }
        Ok(())
    }

    /// Span covered by the samples, in minutes.
    pub fn duration_minutes(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => (b.time - a.time) / 60.0,
            _ => 0.0,
        }
    }
}

/// Regular signal with one ICP value (mm Hg) per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSignal {
    pub id: RecordingId,
    pub values: Vec<f64>,
    pub start_minute: i64,
}

impl CleanSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Resampling rate in Hz.
    pub target_rate: f64,
    /// Smoothing window, in resampled samples.
    pub window: usize,
    /// Smoothing stride, in resampled samples.
    pub stride: usize,
    /// Downsampling factor, in resampled samples.
    pub downsample: usize,
    pub icp_max: f64,
    pub icp_min: f64,
    /// Recordings shorter than this many minutes are excluded.
    pub min_duration: usize,
    /// Reject signals holding one exact value for this many minutes.
    /// `None` disables the check.
    pub flat_run_threshold: Option<usize>,
    pub allowed_monitors: Vec<MonitorType>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_rate: 50.0,
            window: 60_000,
            stride: 3_000,
            downsample: 3_000,
            icp_max: 50.0,
            icp_min: -5.0,
            min_duration: 120,
            flat_run_threshold: Some(60),
            allowed_monitors: vec![MonitorType::Intraparenchymal],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("preprocess: {m}")));
        if !(self.target_rate.is_finite() && self.target_rate > 0.0) {
            return fail("target_rate must be positive");
        }
        if self.stride == 0 || self.window < self.stride {
            return fail("need window >= stride >= 1");
        }
        if self.downsample == 0 {
            return fail("downsample must be >= 1");
        }
        if self.icp_min.is_nan() || self.icp_max.is_nan() || self.icp_min >= self.icp_max {
            return fail("icp_min must be below icp_max");
        }
        if self.min_duration == 0 {
            return fail("min_duration must be positive");
        }
        if self.flat_run_threshold == Some(0) {
            return fail("flat_run_threshold must be positive (or null to disable)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    /// History length in minutes.
    pub in_len: usize,
    /// Forecast horizon in minutes.
    pub out_len: usize,
    /// Step between consecutive segments in minutes.
    pub stride: usize,
    /// Padded input length for fixed-window models.
    pub fixed_len: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            in_len: 60,
            out_len: 30,
            stride: 5,
            fixed_len: 512,
        }
    }
}

impl SegmentConfig {
    pub fn span(&self) -> usize {
        self.in_len + self.out_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_len == 0 || self.out_len == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "segment: in_len, out_len and stride must be >= 1".into(),
            ));
        }
        if self.in_len > self.fixed_len {
            return Err(Error::PadOverflow {
                in_len: self.in_len,
                fixed_len: self.fixed_len,
            });
        }
        Ok(())
    }
}

/// One (history, target) pair cut from a clean signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: RecordingId,
    pub seg_index: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_padded: Vec<f64>,
    pub mask: Vec<u8>,
}

impl Segment {
    pub fn key(&self) -> SegmentKey {
        SegmentKey {
            patient_id: self.id.patient_id.clone(),
            recording_id: self.id.recording_id.clone(),
            seg_index: self.seg_index,
        }
    }
}

/// Identity of a segment inside a dataset. Orders by patient, recording,
/// then position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub patient_id: String,
    pub recording_id: String,
    pub seg_index: usize,
}

/// Pooled moments used for z-scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: f64,
    pub std: f64,
}

/// A set of clean signals that went through one preprocessing config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub preprocess: PreprocessConfig,
    pub signals: Vec<CleanSignal>,
}

impl Dataset {
    /// Builds a dataset after checking recording ids are unique.
    pub fn new(preprocess: PreprocessConfig, signals: Vec<CleanSignal>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for s in &signals {
            if let Some(prev) = seen.insert(&s.id.recording_id, &s.id.patient_id) {
                let msg = if prev == &s.id.patient_id {
                    format!("duplicate recording id {}", s.id.recording_id)
                } else {
                    format!(
                        "recording {} belongs to both {} and {}",
                        s.id.recording_id, prev, s.id.patient_id
                    )
                };
                return Err(Error::InvalidConfig(msg));
            }
        }
        Ok(Self {
            preprocess,
            signals,
        })
    }

    /// Sorted, de-duplicated patient ids.
    pub fn patients(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .signals
            .iter()
            .map(|s| s.id.patient_id.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Groups recordings by patient.
    pub fn by_patient(&self) -> BTreeMap<&str, Vec<&CleanSignal>> {
        let mut map: BTreeMap<&str, Vec<&CleanSignal>> = BTreeMap::new();
        for s in &self.signals {
            map.entry(s.id.patient_id.as_str()).or_default().push(s);
        }
        map
    }
}
