//! Univariate encoder-decoder LSTM with an affine output head.
//!
//! The encoder consumes the history one value per step starting from a zero
//! state; the decoder starts from the encoder's final `(h, c)` and is fed the
//! last history value, then either the previous target (teacher forcing) or
//! its own previous prediction. All parameters live in one flat buffer so the
//! optimizer and gradient checks can treat them uniformly.
//!
//! Gate rows are ordered input, forget, candidate, output.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Forecaster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    EncoderInput,
    EncoderRecurrent,
    EncoderBias,
    DecoderInput,
    DecoderRecurrent,
    DecoderBias,
    HeadWeight,
    HeadBias,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::EncoderInput,
        Section::EncoderRecurrent,
        Section::EncoderBias,
        Section::DecoderInput,
        Section::DecoderRecurrent,
        Section::DecoderBias,
        Section::HeadWeight,
        Section::HeadBias,
    ];
}

/// Index range of a section inside the flat buffer of a model with
/// `hidden` units.
pub fn section_range(hidden: usize, section: Section) -> Range<usize> {
    let g = 4 * hidden;
    let cell = g + g * hidden + g;
    let span = |start: usize, len: usize| start..start + len;
    match section {
        Section::EncoderInput => span(0, g),
        Section::EncoderRecurrent => span(g, g * hidden),
        Section::EncoderBias => span(g + g * hidden, g),
        Section::DecoderInput => span(cell, g),
        Section::DecoderRecurrent => span(cell + g, g * hidden),
        Section::DecoderBias => span(cell + g + g * hidden, g),
        Section::HeadWeight => span(2 * cell, hidden),
        Section::HeadBias => span(2 * cell + hidden, 1),
    }
}

pub fn param_count(hidden: usize) -> usize {
    section_range(hidden, Section::HeadBias).end
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr")]
pub struct LstmParams {
    hidden: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct ParamsRepr {
    hidden: usize,
    values: Vec<f64>,
}

impl TryFrom<ParamsRepr> for LstmParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        LstmParams::from_values(r.hidden, r.values)
    }
}

impl LstmParams {
    /// All-zero parameters.
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            values: vec![0.0; param_count(hidden)],
        }
    }

    pub fn from_values(hidden: usize, values: Vec<f64>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidConfig("hidden size must be >= 1".into()));
        }
        if values.len() != param_count(hidden) {
            return Err(Error::ShapeError(format!(
                "{} parameters for hidden size {hidden}, expected {}",
                values.len(),
                param_count(hidden)
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence("non-finite parameter".into()));
        }
        Ok(Self { hidden, values })
    }

    /// Uniform in `[-1/sqrt(H), 1/sqrt(H)]`, with forget-gate biases shifted
    /// by +1.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(hidden);
        for v in &mut p.values {
            *v = rng.random_range(-k..=k);
        }
        for s in [Section::EncoderBias, Section::DecoderBias] {
            for v in &mut p.section_mut(s)[hidden..2 * hidden] {
                *v += 1.0;
            }
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn section(&self, s: Section) -> &[f64] {
        &self.values[section_range(self.hidden, s)]
    }

    pub fn section_mut(&mut self, s: Section) -> &mut [f64] {
        let r = section_range(self.hidden, s);
        &mut self.values[r]
    }

    fn cell(&self, decoder: bool) -> Cell<'_> {
        let (i, r, b) = if decoder {
            (
                Section::DecoderInput,
                Section::DecoderRecurrent,
                Section::DecoderBias,
            )
        } else {
            (
                Section::EncoderInput,
                Section::EncoderRecurrent,
                Section::EncoderBias,
            )
        };
        Cell {
            w_ih: self.section(i),
            w_hh: self.section(r),
            bias: self.section(b),
        }
    }
}

struct Cell<'a> {
    w_ih: &'a [f64],
    w_hh: &'a [f64],
    bias: &'a [f64],
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Cell<'_> {
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        hidden: usize,
        input: f64,
        h_prev: &[f64],
        c_prev: &[f64],
        gates: &mut [f64],
        c: &mut [f64],
        tanh_c: &mut [f64],
        h: &mut [f64],
    ) {
        for (r, gate) in gates.iter_mut().enumerate() {
            let row = &self.w_hh[r * hidden..(r + 1) * hidden];
            let z = self.bias[r]
                + self.w_ih[r] * input
                + row.iter().zip(h_prev).map(|(w, h)| w * h).sum::<f64>();
            *gate = if (2 * hidden..3 * hidden).contains(&r) {
                z.tanh()
            } else {
                sigmoid(z)
            };
        }
        for j in 0..hidden {
            let (i, f, g, o) = (
                gates[j],
                gates[hidden + j],
                gates[2 * hidden + j],
                gates[3 * hidden + j],
            );
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
    }
}

/// Everything the backward pass needs from one forward unroll.
#[derive(Debug, Clone)]
pub struct Trace {
    hidden: usize,
    in_len: usize,
    inputs: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    /// `feedback[k]`: decoder step `k` consumed prediction `k-1`.
    feedback: Vec<bool>,
    pub y_hat: Vec<f64>,
}

/// One teacher-forcing draw per decoder step after the first; `true` feeds
/// the ground truth.
pub fn draw_teacher_mask<R: Rng + ?Sized>(out_len: usize, tf_prob: f64, rng: &mut R) -> Vec<bool> {
    if tf_prob <= 0.0 {
        return vec![false; out_len.saturating_sub(1)];
    }
    (1..out_len)
        .map(|_| rng.random::<f64>() < tf_prob)
        .collect()
}

/// Forward pass keeping the activations. `teacher_mask[k-1]` decides whether
/// decoder step `k` is fed `y_teacher[k-1]`.
pub fn forward_trace(
    params: &LstmParams,
    x: &[f64],
    out_len: usize,
    y_teacher: Option<&[f64]>,
    teacher_mask: &[bool],
) -> Result<Trace> {
    if x.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if let Some(y) = y_teacher {
        if y.len() != out_len {
            return Err(Error::ShapeError(format!(
                "teacher has {} values, horizon is {out_len}",
                y.len()
            )));
        }
    }
    let hidden = params.hidden;
    let in_len = x.len();
    let steps = in_len + out_len;
    let mut tr = Trace {
        hidden,
        in_len,
        inputs: Vec::with_capacity(steps),
        h: vec![0.0; (steps + 1) * hidden],
        c: vec![0.0; (steps + 1) * hidden],
        gates: vec![0.0; steps * 4 * hidden],
        tanh_c: vec![0.0; steps * hidden],
        feedback: vec![false; out_len],
        y_hat: Vec::with_capacity(out_len),
    };
    let head_w = params.section(Section::HeadWeight);
    let head_b = params.section(Section::HeadBias)[0];
    let (encoder, decoder) = (params.cell(false), params.cell(true));

    for t in 0..steps {
        let input = if t < in_len {
            x[t]
        } else {
            let k = t - in_len;
            match (k, y_teacher) {
                (0, _) => x[in_len - 1],
                (k, Some(y)) if teacher_mask.get(k - 1).copied().unwrap_or(false) => y[k - 1],
                (k, _) => {
                    tr.feedback[k] = true;
                    tr.y_hat[k - 1]
                }
            }
        };
        tr.inputs.push(input);
        let (h_done, h_rest) = tr.h.split_at_mut((t + 1) * hidden);
        let (c_done, c_rest) = tr.c.split_at_mut((t + 1) * hidden);
        let h_out = &mut h_rest[..hidden];
        let cell = if t < in_len { &encoder } else { &decoder };
        cell.step(
            hidden,
            input,
            &h_done[t * hidden..],
            &c_done[t * hidden..],
            &mut tr.gates[t * 4 * hidden..(t + 1) * 4 * hidden],
            &mut c_rest[..hidden],
            &mut tr.tanh_c[t * hidden..(t + 1) * hidden],
            h_out,
        );
        if t >= in_len {
            let y = head_b
                + head_w
                    .iter()
                    .zip(h_out.iter())
                    .map(|(w, h)| w * h)
                    .sum::<f64>();
            if !y.is_finite() {
                return Err(Error::NumericalDivergence(format!(
                    "decoder output at step {}",
                    t - in_len
                )));
            }
            tr.y_hat.push(y);
        }
    }
    Ok(tr)
}

/// Runs the model, drawing teacher forcing from `rng` when `tf_prob > 0`.
pub fn lstm_forward<R: Rng + ?Sized>(
    params: &LstmParams,
    x: &[f64],
    out_len: usize,
    y_teacher: Option<&[f64]>,
    tf_prob: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&tf_prob) {
        return Err(Error::InvalidConfig(format!(
            "tf_prob {tf_prob} outside [0, 1]"
        )));
    }
    if tf_prob > 0.0 && y_teacher.is_none() {
        return Err(Error::ShapeError("teacher forcing needs targets".into()));
    }
    let mask = draw_teacher_mask(out_len, tf_prob, rng);
    Ok(forward_trace(params, x, out_len, y_teacher, &mask)?.y_hat)
}

/// Free-running inference.
pub fn lstm_predict(params: &LstmParams, x: &[f64], out_len: usize) -> Result<Vec<f64>> {
    Ok(forward_trace(params, x, out_len, None, &[])?.y_hat)
}

/// Backpropagates `weight * MSE(trace.y_hat, y)` through the unroll and adds
/// the result into `grad` (same layout as the parameters). Returns the
/// unweighted MSE.
pub fn accumulate_gradients(
    params: &LstmParams,
    trace: &Trace,
    y: &[f64],
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let out_len = trace.y_hat.len();
    if y.len() != out_len {
        return Err(Error::ShapeError(format!(
            "target has {} values, forecast has {out_len}",
            y.len()
        )));
    }
    if grad.len() != params.values.len() {
        return Err(Error::ShapeError("gradient buffer size".into()));
    }
    let hidden = trace.hidden;
    let in_len = trace.in_len;
    let steps = in_len + out_len;
    let loss = trace
        .y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / out_len as f64;

    let head_w = params.section(Section::HeadWeight);
    let head_w_off = section_range(hidden, Section::HeadWeight).start;
    let head_b_off = section_range(hidden, Section::HeadBias).start;

    let mut dh = vec![0.0; hidden];
    let mut dc = vec![0.0; hidden];
    let mut dz = vec![0.0; 4 * hidden];
    let mut dx_next = 0.0;

    for t in (0..steps).rev() {
        let decoder = t >= in_len;
        if decoder {
            let k = t - in_len;
            let mut dy = weight * 2.0 * (trace.y_hat[k] - y[k]) / out_len as f64;
            if k + 1 < out_len && trace.feedback[k + 1] {
                dy += dx_next;
            }
            let h_out = &trace.h[(t + 1) * hidden..(t + 2) * hidden];
            for j in 0..hidden {
                grad[head_w_off + j] += dy * h_out[j];
                dh[j] += dy * head_w[j];
            }
            grad[head_b_off] += dy;
        }

        let gates = &trace.gates[t * 4 * hidden..(t + 1) * 4 * hidden];
        let c_prev = &trace.c[t * hidden..(t + 1) * hidden];
        let tanh_c = &trace.tanh_c[t * hidden..(t + 1) * hidden];
        let h_prev = &trace.h[t * hidden..(t + 1) * hidden];
        for j in 0..hidden {
            let (i, f, g, o) = (
                gates[j],
                gates[hidden + j],
                gates[2 * hidden + j],
                gates[3 * hidden + j],
            );
            let tc = tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * g * i * (1.0 - i);
            dz[hidden + j] = dct * c_prev[j] * f * (1.0 - f);
            dz[2 * hidden + j] = dct * i * (1.0 - g * g);
            dz[3 * hidden + j] = dh[j] * tc * o * (1.0 - o);
            dc[j] = dct * f;
        }

        let (si, sr, sb) = if decoder {
            (
                Section::DecoderInput,
                Section::DecoderRecurrent,
                Section::DecoderBias,
            )
        } else {
            (
                Section::EncoderInput,
                Section::EncoderRecurrent,
                Section::EncoderBias,
            )
        };
        let (oi, or, ob) = (
            section_range(hidden, si).start,
            section_range(hidden, sr).start,
            section_range(hidden, sb).start,
        );
        let w_ih = params.section(si);
        let w_hh = params.section(sr);
        let input = trace.inputs[t];
        dh.iter_mut().for_each(|v| *v = 0.0);
        let mut dx = 0.0;
        for (r, &d) in dz.iter().enumerate() {
            grad[oi + r] += d * input;
            grad[ob + r] += d;
            dx += w_ih[r] * d;
            let row = &w_hh[r * hidden..(r + 1) * hidden];
            let grow = &mut grad[or + r * hidden..or + (r + 1) * hidden];
            for j in 0..hidden {
                grow[j] += d * h_prev[j];
                dh[j] += row[j] * d;
            }
        }
        dx_next = dx;
    }
    Ok(loss)
}

impl Forecaster for LstmParams {
    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        lstm_predict(self, history, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_contiguous() {
        let h = 3;
        let mut end = 0;
        for s in Section::ALL {
            let r = section_range(h, s);
            assert_eq!(r.start, end);
            end = r.end;
        }
        assert_eq!(end, param_count(h));
        assert_eq!(param_count(512), 2 * (4 * 512 * 514) + 513);
    }

    #[test]
    fn init_is_bounded_and_biases_forget_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::init(16, &mut rng);
        let k = 0.25;
        let fb = &p.section(Section::EncoderBias)[16..32];
        assert!(fb.iter().all(|&v| v >= 1.0 - k && v <= 1.0 + k));
        assert!(p
            .section(Section::EncoderRecurrent)
            .iter()
            .all(|v| v.abs() <= k));
    }

    // Step-by-step evaluation of the cell equations for H=2, in=3, out=2.
    #[test]
    fn hand_unrolled_tiny_model() {
        let h = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LstmParams::init(h, &mut rng);
        let x = [0.3, -0.8, 1.1];

        let step = |dec: bool, inp: f64, hp: [f64; 2], cp: [f64; 2]| {
            let (wi, wh, b) = if dec {
                (
                    p.section(Section::DecoderInput),
                    p.section(Section::DecoderRecurrent),
                    p.section(Section::DecoderBias),
                )
            } else {
                (
                    p.section(Section::EncoderInput),
                    p.section(Section::EncoderRecurrent),
                    p.section(Section::EncoderBias),
                )
            };
            let z = |r: usize| b[r] + wi[r] * inp + wh[r * 2] * hp[0] + wh[r * 2 + 1] * hp[1];
            let sg = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut hn = [0.0; 2];
            let mut cn = [0.0; 2];
            for j in 0..2 {
                let i = sg(z(j));
                let f = sg(z(2 + j));
                let g = z(4 + j).tanh();
                let o = sg(z(6 + j));
                cn[j] = f * cp[j] + i * g;
                hn[j] = o * cn[j].tanh();
            }
            (hn, cn)
        };
        let head = |hs: [f64; 2]| {
            let w = p.section(Section::HeadWeight);
            p.section(Section::HeadBias)[0] + w[0] * hs[0] + w[1] * hs[1]
        };
        let (mut hs, mut cs) = ([0.0; 2], [0.0; 2]);
        for &v in &x {
            (hs, cs) = step(false, v, hs, cs);
        }
        (hs, cs) = step(true, x[2], hs, cs);
        let y0 = head(hs);
        (hs, _) = step(true, y0, hs, cs);
        let y1 = head(hs);

        let got = lstm_predict(&p, &x, 2).unwrap();
        assert!((got[0] - y0).abs() < 1e-14);
        assert!((got[1] - y1).abs() < 1e-14);
    }

    #[test]
    fn full_teacher_forcing_feeds_shifted_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(4, &mut rng);
        let x = [0.1, 0.2, 0.3];
        let y = [5.0, -3.0, 2.0, 7.0];
        let tr = forward_trace(&p, &x, 4, Some(&y), &[true; 3]).unwrap();
        assert_eq!(tr.inputs[3..], [0.3, 5.0, -3.0, 2.0]);
        let out = lstm_forward(&p, &x, 4, Some(&y), 1.0, &mut rng).unwrap();
        assert_eq!(out, tr.y_hat);
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(8, &mut rng);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = lstm_forward(&p, &x, 5, None, 0.0, &mut rng).unwrap();
        let b = lstm_forward(&p, &x, 5, None, 0.0, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, lstm_predict(&p, &x, 5).unwrap());
    }

    #[test]
    fn teacher_forcing_without_targets_is_rejected() {
        let p = LstmParams::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(lstm_forward(&p, &[1.0], 2, None, 0.5, &mut rng).is_err());
        assert!(lstm_forward(&p, &[1.0], 2, None, 1.5, &mut rng).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = LstmParams::zeros(2);
        p.section_mut(Section::HeadBias)[0] = f64::MAX;
        p.section_mut(Section::HeadWeight)[0] = f64::MAX;
        p.section_mut(Section::DecoderBias)
            .iter_mut()
            .for_each(|v| *v = 10.0);
        assert!(matches!(
            lstm_predict(&p, &[1.0, 2.0], 3),
            Err(Error::NumericalDivergence(_))
        ));
    }

    #[test]
    fn params_serde_checks_shape() {
        let p = LstmParams::zeros(2);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<LstmParams>(&s).unwrap(), p);
        assert!(serde_json::from_str::<LstmParams>(r#"{"hidden":2,"values":[0.0]}"#).is_err());
    }
}
