//! Reference adapter for the line protocol, used by tests and demos.
//!
//! `predict` answers each segment with the mean of its observed inputs (or
//! the last observed value with `--echo`), plus the bias learned by a
//! previous `finetune` session when `--weights` points at one. `finetune`
//! learns that bias as the mean target-minus-input offset.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Predict,
    Finetune,
}

#[derive(Debug, Parser)]
struct Args {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Forecast the last observed value.
    #[arg(long)]
    echo: bool,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Emit one value too many per forecast.
    #[arg(long)]
    bad_length: bool,
    /// Answer only after end of stream, in reverse order.
    #[arg(long)]
    reverse: bool,
    /// Sleep this long before every answer.
    #[arg(long, default_value_t = 0)]
    stall_ms: u64,
    /// Report an adapter error instead of answering.
    #[arg(long)]
    fail: bool,
}

#[derive(Deserialize)]
struct SegmentIn {
    patient_id: String,
    recording_id: String,
    seg_index: usize,
    x: Vec<f64>,
    mask: Vec<u8>,
    #[serde(default)]
    y: Vec<f64>,
    out_len: usize,
}

#[derive(Serialize)]
struct Prediction<'a> {
    patient_id: &'a str,
    recording_id: &'a str,
    seg_index: usize,
    y_hat: Vec<f64>,
}

#[derive(Serialize, Deserialize, Default)]
struct Weights {
    bias: f64,
    segments: usize,
}

fn observed(s: &SegmentIn) -> Vec<f64> {
    s.x.iter()
        .zip(&s.mask)
        .filter(|(_, &m)| m == 1)
        .map(|(v, _)| *v)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn main() -> Result<()> {
    match run(Args::parse()) {
        Err(e) if is_broken_pipe(&e) => Ok(()),
        other => other,
    }
}

/// The host stopped listening; nothing left to do.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<io::Error>()
        .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

fn run(args: Args) -> Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut pending = Vec::new();
    let mut finetune = Vec::new();
    let weights: Weights = match (&args.weights, args.mode) {
        (Some(p), Mode::Predict) if p.exists() => serde_json::from_str(&fs::read_to_string(p)?)?,
        _ => Weights::default(),
    };

    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            break;
        }
        let seg: SegmentIn = serde_json::from_str(&line).context("bad segment line")?;
        if args.fail {
            writeln!(out, "{}", serde_json::json!({ "error": "mock failure" }))?;
            out.flush()?;
            return Ok(());
        }
        match args.mode {
            Mode::Finetune => finetune.push(mean(&seg.y) - mean(&observed(&seg))),
            Mode::Predict if args.reverse => pending.push(seg),
            Mode::Predict => answer(&mut out, &seg, &args, &weights)?,
        }
    }
    for seg in pending.iter().rev() {
        answer(&mut out, seg, &args, &weights)?;
    }
    if args.mode == Mode::Finetune {
        let w = Weights {
            bias: mean(&finetune),
            segments: finetune.len(),
        };
        writeln!(
            out,
            "# finetuned on {} segments, bias {}",
            w.segments, w.bias
        )?;
        if let Some(p) = &args.weights {
            fs::write(p, serde_json::to_string(&w)?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn answer(out: &mut impl Write, seg: &SegmentIn, args: &Args, w: &Weights) -> Result<()> {
    if args.stall_ms > 0 {
        thread::sleep(Duration::from_millis(args.stall_ms));
    }
    let x = observed(seg);
    let level = if args.echo {
        x.last().copied().unwrap_or(0.0)
    } else {
        mean(&x) + w.bias
    };
    let n = seg.out_len + usize::from(args.bad_length);
    let p = Prediction {
        patient_id: &seg.patient_id,
        recording_id: &seg.recording_id,
        seg_index: seg.seg_index,
        y_hat: vec![level; n],
    };
    writeln!(out, "{}", serde_json::to_string(&p)?)?;
    out.flush()?;
    Ok(())
}
