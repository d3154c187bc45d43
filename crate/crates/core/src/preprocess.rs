//! Raw ICP waveform to per-minute clean signal.
//!
//! The pipeline runs resample → clip → fill → smooth/downsample. Screening
//! (monitor type, minimum duration, manual trims, flat runs) happens in
//! [`screen_recording`], after which [`fit_scaler`] and [`ScalerStats`]
//! handle z-scaling.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CleanSignal, PreprocessConfig, RawRecording, Sample, ScalerStats};

/// Samples landing this close below a bin edge are counted in the next bin,
/// so timestamps like `i as f64 / 50.0` map back to bin `i`.
const BIN_EPS: f64 = 1e-6;

/// Sampling period: the nominal one, else the median spacing of the samples.
fn sample_period(raw: &RawRecording) -> Option<f64> {
    if let Some(r) = raw.nominal_rate.filter(|r| *r > 0.0) {
        return Some(1.0 / r);
    }
    let mut gaps: Vec<f64> = raw
        .samples
        .windows(2)
        .map(|w| w[1].time - w[0].time)
        .filter(|g| *g > 0.0)
        .collect();
    if gaps.is_empty() {
        return None;
    }
    let mid = gaps.len() / 2;
    let (_, m, _) = gaps.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Bins samples onto a regular grid and returns `(first_time, bin_values)`.
/// Each sample covers one sampling period, so the grid spans
/// `[t0, t_last + period)`.
pub fn resample_values(raw: &RawRecording, target_rate: f64) -> Result<(f64, Vec<Option<f64>>)> {
    raw.validate()?;
    let t0 = raw.samples[0].time;
    let last = raw.samples[raw.samples.len() - 1].time;
    let bin_of = |t: f64| ((t - t0) * target_rate + BIN_EPS).floor() as usize;
    let covered = sample_period(raw)
        .map(|dt| ((last - t0 + dt) * target_rate - BIN_EPS).ceil() as usize)
        .unwrap_or(0);
    let n_bins = (bin_of(last) + 1).max(covered);

    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0u32; n_bins];
    for s in &raw.samples {
        if let Some(v) = s.value {
            let b = bin_of(s.time);
            sums[b] += v;
            counts[b] += 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, n)| match n {
            0 => None,
            1 => Some(sum),
            n => Some(sum / f64::from(n)),
        })
        .collect();
    Ok((t0, values))
}

/// Averages samples into `1/target_rate`-second bins. Empty bins become missing.
pub fn resample_to_rate(raw: &RawRecording, target_rate: f64) -> Result<RawRecording> {
    let (t0, values) = resample_values(raw, target_rate)?;
    let samples = values
        .into_iter()
        .enumerate()
        .map(|(i, value)| Sample {
            time: t0 + i as f64 / target_rate,
            value,
        })
        .collect();
    Ok(RawRecording {
        id: raw.id.clone(),
        samples,
        nominal_rate: Some(target_rate),
    })
}

/// Marks values outside `[icp_min, icp_max]` as missing.
pub fn clip_physiologic(sig: &[Option<f64>], icp_min: f64, icp_max: f64) -> Vec<Option<f64>> {
    sig.iter()
        .map(|v| v.filter(|&x| (icp_min..=icp_max).contains(&x)))
        .collect()
}

/// Replaces each missing run with the next present value; a trailing run
/// takes the last present value.
pub fn fill_missing(sig: &[Option<f64>]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; sig.len()];
    let mut next: Option<f64> = None;
    let mut last_present = None;
    for (i, v) in sig.iter().enumerate().rev() {
        if let Some(x) = v {
            next = Some(*x);
            last_present.get_or_insert(i);
        }
        // trailing values are patched below
        out[i] = next.unwrap_or(f64::NAN);
    }
    let Some(last) = last_present else {
        return Err(Error::AllMissing);
    };
    let tail = out[last];
    for v in &mut out[last + 1..] {
        *v = tail;
    }
    Ok(out)
}

/// Causal sliding mean (width `window`, stride `stride`) followed by mean
/// downsampling to one value per `downsample` input samples.
///
/// Output `m` averages the smoothed points whose window ends inside
/// `(m*downsample, (m+1)*downsample]`. When the stride leaves such an
/// interval empty, the trailing window ending at `(m+1)*downsample` is used.
/// Windows near the start shrink to the available history.
pub fn smooth_downsample(
    sig: &[f64],
    window: usize,
    stride: usize,
    downsample: usize,
) -> Result<Vec<f64>> {
    if window == 0 || stride == 0 || downsample == 0 {
        return Err(Error::InvalidConfig(
            "window, stride and downsample must be >= 1".into(),
        ));
    }
    if sig.len() < window {
        return Err(Error::TooShort {
            len: sig.len(),
            window,
        });
    }
    // Shift by the first value so constant stretches sum to exactly zero.
    let base = sig[0];
    let mut prefix = Vec::with_capacity(sig.len() + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0;
    for &v in sig {
        acc += v - base;
        prefix.push(acc);
    }
    let (lo, hi) = sig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let trailing_mean = |end: usize| {
        let start = end.saturating_sub(window);
        base + (prefix[end] - prefix[start]) / (end - start) as f64
    };

    let n_out = sig.len() / downsample;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let lo_end = m * downsample; // exclusive
        let hi_end = (m + 1) * downsample; // inclusive
        let first_k = lo_end / stride + 1;
        let last_k = hi_end / stride;
        let value = if first_k > last_k {
            trailing_mean(hi_end)
        } else {
            let n = (last_k - first_k + 1) as f64;
            let sum: f64 = (first_k..=last_k)
                .map(|k| trailing_mean(k * stride) - base)
                .sum();
            base + sum / n
        };
        out.push(value.clamp(lo, hi));
    }
    Ok(out)
}

/// Full resample → clip → fill → smooth/downsample pipeline.
pub fn preprocess_recording(raw: &RawRecording, cfg: &PreprocessConfig) -> Result<CleanSignal> {
    cfg.validate()?;
    let (t0, binned) = resample_values(raw, cfg.target_rate)?;
    let clipped = clip_physiologic(&binned, cfg.icp_min, cfg.icp_max);
    drop(binned);
    let filled = fill_missing(&clipped)?;
    drop(clipped);
    let values = smooth_downsample(&filled, cfg.window, cfg.stride, cfg.downsample)?;
    Ok(CleanSignal {
        id: raw.id.clone(),
        values,
        start_minute: (t0 / 60.0).floor() as i64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Realism {
    Ok,
    FlatRun { start: usize, len: usize },
}

/// Rejects signals holding one exact value for `threshold` consecutive
/// minutes or more. The first such run is reported.
pub fn detect_unrealistic(clean: &CleanSignal, threshold: Option<usize>) -> Realism {
    let Some(threshold) = threshold else {
        return Realism::Ok;
    };
    let v = &clean.values;
    let mut start = 0;
    while start < v.len() {
        let mut end = start + 1;
        while end < v.len() && v[end] == v[start] {
            end += 1;
        }
        if end - start >= threshold {
            return Realism::FlatRun {
                start,
                len: end - start,
            };
        }
        start = end;
    }
    Realism::Ok
}

/// Truncates a signal at its manual cut minute, if one is listed.
pub fn trim_ending(
    clean: &CleanSignal,
    manual_trims: &BTreeMap<String, usize>,
) -> Result<CleanSignal> {
    let Some(&cut) = manual_trims.get(&clean.id.recording_id) else {
        return Ok(clean.clone());
    };
    if cut == 0 {
        return Err(Error::EmptySignal);
    }
    if cut >= clean.len() {
        return Err(Error::InvalidTrim {
            cut,
            len: clean.len(),
        });
    }
    Ok(CleanSignal {
        id: clean.id.clone(),
        values: clean.values[..cut].to_vec(),
        start_minute: clean.start_minute,
    })
}

/// Why a recording was left out of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Exclusion {
    MonitorType { monitor: crate::types::MonitorType },
    BelowMinDuration { minutes: usize, min_duration: usize },
    FlatRun { start: usize, len: usize },
    Failed { message: String },
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exclusion::MonitorType { monitor } => {
                let name = serde_json::to_value(monitor).unwrap_or_default();
                write!(
                    f,
                    "monitor type {} not allowed",
                    name.as_str().unwrap_or("?")
                )
            }
            Exclusion::BelowMinDuration {
                minutes,
                min_duration,
            } => write!(f, "{minutes} minutes is below min_duration {min_duration}"),
            Exclusion::FlatRun { start, len } => {
                write!(f, "flat run of {len} minutes starting at minute {start}")
            }
            Exclusion::Failed { message } => write!(f, "{message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Screening {
    Accepted {
        signal: CleanSignal,
        trimmed_at: Option<usize>,
    },
    Excluded(Exclusion),
}

/// Applies the inclusion rules and the preprocessing pipeline to one
/// recording. Numerical failures (empty or all-missing input) become
/// exclusions so a batch run can continue.
pub fn screen_recording(
    raw: &RawRecording,
    cfg: &PreprocessConfig,
    manual_trims: &BTreeMap<String, usize>,
) -> Result<Screening> {
    cfg.validate()?;
    if !cfg.allowed_monitors.contains(&raw.id.monitor_type) {
        return Ok(Screening::Excluded(Exclusion::MonitorType {
            monitor: raw.id.monitor_type,
        }));
    }
    let clean = match preprocess_recording(raw, cfg) {
        Ok(c) => c,
        Err(
            e @ (Error::EmptyRecording
            | Error::AllMissing
            | Error::TooShort { .. }
            | Error::UnorderedSamples { .. }),
        ) => {
            return Ok(Screening::Excluded(Exclusion::Failed {
                message: e.to_string(),
            }))
        }
        Err(e) => return Err(e),
    };
    let too_short = |len: usize| {
        Screening::Excluded(Exclusion::BelowMinDuration {
            minutes: len,
            min_duration: cfg.min_duration,
        })
    };
    if clean.len() < cfg.min_duration {
        return Ok(too_short(clean.len()));
    }
    let trimmed_at = manual_trims.get(&raw.id.recording_id).copied();
    let clean = match trim_ending(&clean, manual_trims) {
        Ok(c) => c,
        Err(e) => {
            return Ok(Screening::Excluded(Exclusion::Failed {
                message: e.to_string(),
            }))
        }
    };
    if clean.len() < cfg.min_duration {
        return Ok(too_short(clean.len()));
    }
    if let Realism::FlatRun { start, len } = detect_unrealistic(&clean, cfg.flat_run_threshold) {
        return Ok(Screening::Excluded(Exclusion::FlatRun { start, len }));
    }
    Ok(Screening::Accepted {
        signal: clean,
        trimmed_at,
    })
}

/// Pooled mean and population standard deviation over every value of every
/// signal.
pub fn fit_scaler<'a, I>(signals: I) -> Result<ScalerStats>
where
    I: IntoIterator<Item = &'a CleanSignal>,
    I::IntoIter: Clone,
{
    let iter = signals.into_iter();
    let (count, sum) = iter
        .clone()
        .flat_map(|s| s.values.iter())
        .fold((0usize, 0.0f64), |(n, s), &v| (n + 1, s + v));
    if count < 2 {
        return Err(Error::DegenerateScale);
    }
    let mean = sum / count as f64;
    let ss: f64 = iter
        .flat_map(|s| s.values.iter())
        .map(|&v| (v - mean) * (v - mean))
        .sum();
    let std = (ss / count as f64).sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::DegenerateScale);
    }
    Ok(ScalerStats { mean, std })
}

impl ScalerStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert(v)).collect()
    }

    pub fn apply_signal(&self, sig: &CleanSignal) -> CleanSignal {
        CleanSignal {
            id: sig.id.clone(),
            values: self.apply_all(&sig.values),
            start_minute: sig.start_minute,
        }
    }
}
