//! Client side of the adapter line protocol.
//!
//! The host spawns the adapter, writes one [`SegmentRecord`] JSON object per
//! line to its stdin followed by an empty line, and reads one prediction
//! object per line from its stdout. Lines starting with `#` are comments
//! (fine-tuning progress, for instance). An object with an `"error"` field
//! reports an adapter-side failure. Predictions are matched back to segments
//! by `(recording_id, seg_index)`, so the adapter may answer in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::unpad;
use crate::types::{MonitorType, RecordingId, Segment, SegmentKey};

use super::ForecastResult;

/// Wire form of a segment. `x` and `mask` are the padded input;
/// `y` is empty when the adapter is asked to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub patient_id: String,
    pub recording_id: String,
    pub seg_index: usize,
    pub x: Vec<f64>,
    pub mask: Vec<u8>,
    pub y: Vec<f64>,
    pub out_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_type: Option<MonitorType>,
}

impl SegmentRecord {
    pub fn from_segment(seg: &Segment, include_target: bool) -> Self {
        Self {
            patient_id: seg.id.patient_id.clone(),
            recording_id: seg.id.recording_id.clone(),
            seg_index: seg.seg_index,
            x: seg.x_padded.clone(),
            mask: seg.mask.clone(),
            y: if include_target {
                seg.y.clone()
            } else {
                Vec::new()
            },
            out_len: seg.y.len(),
            site: seg.id.site.clone(),
            monitor_type: Some(seg.id.monitor_type),
        }
    }

    pub fn into_segment(self) -> Result<Segment> {
        if self.x.len() != self.mask.len() || self.mask.iter().any(|&m| m > 1) {
            return Err(Error::ShapeError(format!(
                "segment {}#{}: mask does not match input",
                self.recording_id, self.seg_index
            )));
        }
        if self.y.len() != self.out_len {
            return Err(Error::ShapeError(format!(
                "segment {}#{}: {} targets, out_len {}",
                self.recording_id,
                self.seg_index,
                self.y.len(),
                self.out_len
            )));
        }
        Ok(Segment {
            x: unpad(&self.x, &self.mask),
            id: RecordingId {
                patient_id: self.patient_id,
                recording_id: self.recording_id,
                site: self.site,
                monitor_type: self.monitor_type.unwrap_or(MonitorType::Other),
            },
            seg_index: self.seg_index,
            y: self.y,
            x_padded: self.x,
            mask: self.mask,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterMode {
    Predict,
    Finetune,
}

impl AdapterMode {
    fn as_str(self) -> &'static str {
        match self {
            AdapterMode::Predict => "predict",
            AdapterMode::Finetune => "finetune",
        }
    }
}

/// How to start an adapter process. `--mode {predict,finetune}` is appended
/// to `args` for every session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterEndpoint {
    pub program: String,
    pub args: Vec<String>,
    /// Longest silence tolerated between two output lines.
    pub timeout: Duration,
}

impl AdapterEndpoint {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            timeout: Duration::from_secs(300),
        }
    }

    /// Runs `command` through `sh -c`; extra arguments are forwarded to it.
    pub fn shell(command: &str) -> Self {
        Self::new(
            "sh",
            vec!["-c".into(), format!("{command} \"$@\""), "adapter".into()],
        )
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_args<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args.extend(extra.into_iter().map(Into::into));
        self
    }

    fn spawn(&self, mode: AdapterMode) -> Result<Child> {
        Command::new(&self.program)
            .args(&self.args)
            .args(["--mode", mode.as_str()])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::AdapterProtocol(format!("cannot start {}: {e}", self.program)))
    }
}

/// Output of one adapter session, comments separated from data lines.
#[derive(Debug, Default)]
struct Transcript {
    data: Vec<String>,
    comments: Vec<String>,
}

fn run_session(
    endpoint: &AdapterEndpoint,
    mode: AdapterMode,
    records: Vec<String>,
    expected_data: Option<usize>,
) -> Result<Transcript> {
    let mut child = endpoint.spawn(mode)?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");

    let writer = thread::spawn(move || -> std::io::Result<()> {
        for line in records {
            stdin.write_all(line.as_bytes())?;
            stdin.write_all(b"\n")?;
        }
        stdin.write_all(b"\n")?;
        stdin.flush()
    });
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let failed = line.is_err();
            if tx.send(line).is_err() || failed {
                break;
            }
        }
    });

    let mut transcript = Transcript::default();
    let outcome = loop {
        if expected_data.is_some_and(|n| transcript.data.len() >= n) {
            break Ok(());
        }
        match rx.recv_timeout(endpoint.timeout) {
            Ok(Ok(line)) => {
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                if let Some(c) = trimmed.strip_prefix('#') {
                    transcript.comments.push(c.trim().to_string());
                } else {
                    transcript.data.push(trimmed.to_string());
                }
            }
            Ok(Err(e)) => {
                break Err(Error::AdapterProtocol(format!(
                    "reading adapter output: {e}"
                )))
            }
            Err(RecvTimeoutError::Timeout) => break Err(Error::AdapterTimeout(endpoint.timeout)),
            Err(RecvTimeoutError::Disconnected) => break Ok(()),
        }
    };
    if let Err(e) = outcome {
        let _ = child.kill();
        let _ = child.wait();
        return Err(e);
    }
    // a data line reporting an adapter failure takes precedence over exit codes
    for line in &transcript.data {
        if let Some(msg) = error_line(line) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::AdapterProtocol(format!("adapter reported: {msg}")));
        }
    }
    let status = wait_with_timeout(&mut child, endpoint.timeout)?;
    let write_result = writer.join().unwrap_or(Ok(()));
    if expected_data.is_some_and(|n| transcript.data.len() >= n) {
        return Ok(transcript);
    }
    match status {
        None => Err(Error::AdapterTimeout(endpoint.timeout)),
        Some(s) if !s.success() => Err(Error::AdapterProtocol(format!("adapter exited with {s}"))),
        Some(_) => match write_result {
            Err(e) if expected_data.is_some() => {
                Err(Error::AdapterProtocol(format!("writing segments: {e}")))
            }
            _ => Ok(transcript),
        },
    }
}

fn error_line(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    let e = v.get("error")?;
    Some(
        e.as_str()
            .map(str::to_string)
            .unwrap_or_else(|| e.to_string()),
    )
}

/// Waits for exit; a process still running after `timeout` is killed and
/// reported as `None`.
fn wait_with_timeout(
    child: &mut Child,
    timeout: Duration,
) -> Result<Option<std::process::ExitStatus>> {
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(Some(status)),
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(None);
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(Error::AdapterProtocol(format!("waiting for adapter: {e}"))),
        }
    }
}

/// Matches prediction lines to segments and validates their lengths.
/// Results come back in segment order.
pub fn match_predictions<I, S>(segments: &[Segment], lines: I) -> Result<Vec<ForecastResult>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut slot: HashMap<(&str, usize), usize> = HashMap::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        if slot
            .insert((s.id.recording_id.as_str(), s.seg_index), i)
            .is_some()
        {
            return Err(Error::AdapterProtocol(format!(
                "segment {}#{} sent twice",
                s.id.recording_id, s.seg_index
            )));
        }
    }
    let mut out: Vec<Option<ForecastResult>> = vec![None; segments.len()];
    for (n, line) in lines.into_iter().enumerate() {
        let line = line.as_ref();
        if let Some(msg) = error_line(line) {
            return Err(Error::AdapterProtocol(format!("adapter reported: {msg}")));
        }
        let pred: ForecastResult = serde_json::from_str(line)
            .map_err(|e| Error::AdapterProtocol(format!("prediction line {}: {e}", n + 1)))?;
        let key = (pred.key.recording_id.as_str(), pred.key.seg_index);
        let Some(&i) = slot.get(&key) else {
            return Err(Error::AdapterProtocol(format!(
                "prediction for unknown segment {}#{}",
                key.0, key.1
            )));
        };
        let seg = &segments[i];
        if pred.y_hat.len() != seg.y.len() {
            return Err(Error::BadPrediction {
                recording_id: seg.id.recording_id.clone(),
                seg_index: seg.seg_index,
                got: pred.y_hat.len(),
                expected: seg.y.len(),
            });
        }
        if pred.y_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::AdapterProtocol(format!(
                "non-finite prediction for {}#{}",
                key.0, key.1
            )));
        }
        if out[i].is_some() {
            return Err(Error::AdapterProtocol(format!(
                "duplicate prediction for {}#{}",
                key.0, key.1
            )));
        }
        out[i] = Some(ForecastResult {
            key: SegmentKey {
                patient_id: seg.id.patient_id.clone(),
                ..pred.key
            },
            y_hat: pred.y_hat,
        });
    }
    out.into_iter()
        .zip(segments)
        .map(|(p, s)| {
            p.ok_or_else(|| {
                Error::AdapterProtocol(format!(
                    "no prediction for {}#{}",
                    s.id.recording_id, s.seg_index
                ))
            })
        })
        .collect()
}

fn encode(segments: &[Segment], include_target: bool) -> Result<Vec<String>> {
    segments
        .iter()
        .map(|s| {
            serde_json::to_string(&SegmentRecord::from_segment(s, include_target))
                .map_err(|e| Error::AdapterProtocol(e.to_string()))
        })
        .collect()
}

/// Streams segments to the adapter in predict mode. Targets are withheld;
/// each record carries `out_len` instead.
pub fn external_forecast(
    segments: &[Segment],
    endpoint: &AdapterEndpoint,
) -> Result<Vec<ForecastResult>> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let transcript = run_session(
        endpoint,
        AdapterMode::Predict,
        encode(segments, false)?,
        Some(segments.len()),
    )?;
    match_predictions(segments, &transcript.data)
}

/// Sends training segments (with targets) in finetune mode and returns the
/// adapter's comment lines, e.g. per-epoch losses.
pub fn external_finetune(segments: &[Segment], endpoint: &AdapterEndpoint) -> Result<Vec<String>> {
    let transcript = run_session(
        endpoint,
        AdapterMode::Finetune,
        encode(segments, true)?,
        None,
    )?;
    Ok(transcript.comments)
}
