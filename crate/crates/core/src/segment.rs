//! Sliding-window (history, target) segmentation.

use crate::error::{Error, Result};
use crate::types::{CleanSignal, Segment, SegmentConfig};

/// Number of segments a signal of `len` values yields.
pub fn segment_count(len: usize, cfg: &SegmentConfig) -> usize {
    if len < cfg.span() || cfg.stride == 0 {
        0
    } else {
        (len - cfg.span()) / cfg.stride + 1
    }
}

/// Cuts one signal into overlapping segments. Each segment's target
/// directly follows its history; a signal shorter than one span yields none.
pub fn segment_signal(clean: &CleanSignal, cfg: &SegmentConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let n = segment_count(clean.len(), cfg);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let start = j * cfg.stride;
        let mid = start + cfg.in_len;
        let seg = Segment {
            id: clean.id.clone(),
            seg_index: j,
            x: clean.values[start..mid].to_vec(),
            y: clean.values[mid..mid + cfg.out_len].to_vec(),
            x_padded: Vec::new(),
            mask: Vec::new(),
        };
        out.push(pad_fixed(seg, cfg)?);
    }
    Ok(out)
}

/// Appends zeros after the history up to `fixed_len` and marks the real
/// positions in `mask`.
pub fn pad_fixed(mut seg: Segment, cfg: &SegmentConfig) -> Result<Segment> {
    let in_len = seg.x.len();
    if in_len > cfg.fixed_len {
        return Err(Error::PadOverflow {
            in_len,
            fixed_len: cfg.fixed_len,
        });
    }
    let mut padded = Vec::with_capacity(cfg.fixed_len);
    padded.extend_from_slice(&seg.x);
    padded.resize(cfg.fixed_len, 0.0);
    let mut mask = vec![1u8; in_len];
    mask.resize(cfg.fixed_len, 0);
    seg.x_padded = padded;
    seg.mask = mask;
    Ok(seg)
}

/// Recovers the history from a padded input.
pub fn unpad(x_padded: &[f64], mask: &[u8]) -> Vec<f64> {
    x_padded
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 1)
        .map(|(&v, _)| v)
        .collect()
}
