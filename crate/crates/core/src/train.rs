//! Minibatch training of the encoder-decoder LSTM.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::lstm::{
    accumulate_gradients, draw_teacher_mask, forward_trace, lstm_predict, LstmParams,
};
use crate::types::Segment;

/// Examples per gradient chunk. Chunks are summed in index order so results
/// do not depend on the thread count.
const CHUNK: usize = 8;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_value: f64,
    pub tf_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 64,
            epochs: 10,
            grad_clip_value: 5.0,
            tf_prob: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.grad_clip_value > 0.0
            && (0.0..=1.0).contains(&self.tf_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("train: {self:?}")))
        }
    }
}

/// Per-epoch mean training loss and teacher-free validation loss
/// (`None` when there is no validation set).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub validation: Vec<Option<f64>>,
}

pub fn mse_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::ShapeError(format!(
            "{} predictions for {} targets",
            y_hat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64)
}

/// One training example: history and target.
pub type Example<'a> = (&'a [f64], &'a [f64]);

/// Batch-mean MSE and its gradient with respect to every parameter.
/// Teacher-forcing draws come from `seed`, one per decoder step, in example
/// order, so the same seed reproduces the same gradient.
pub fn backward(
    params: &LstmParams,
    batch: &[Example<'_>],
    tf_prob: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::ShapeError("empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks: Vec<Vec<bool>> = batch
        .iter()
        .map(|(_, y)| draw_teacher_mask(y.len(), tf_prob, &mut rng))
        .collect();
    let weight = 1.0 / batch.len() as f64;
    let n_params = params.values().len();

    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .zip(masks.par_chunks(CHUNK))
        .map(|(examples, masks)| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for ((x, y), mask) in examples.iter().zip(masks) {
                let trace = forward_trace(params, x, y.len(), Some(y), mask)?;
                loss += weight * accumulate_gradients(params, &trace, y, weight, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;

    let mut iter = partials.into_iter();
    let (mut loss, mut grad) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalDivergence("gradient".into()));
    }
    Ok((loss, grad))
}

/// Clamps each component to `[-clip_value, clip_value]`.
pub fn clip_gradients(grads: &mut [f64], clip_value: f64) {
    for g in grads {
        *g = g.clamp(-clip_value, clip_value);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update with beta1 0.9, beta2 0.999, eps 1e-8.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, learning_rate: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Mean teacher-free MSE over segments.
pub fn validation_loss(params: &LstmParams, segments: &[Segment]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let losses: Vec<f64> = segments
        .par_iter()
        .map(|s| mse_loss(&lstm_predict(params, &s.x, s.y.len())?, &s.y))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams,
    pub curve: LossCurve,
    /// Training stopped on a non-finite loss, gradient or parameter;
    /// `params` are the last finite ones.
    pub diverged: bool,
}

/// Runs `epochs` passes of shuffled minibatches (last partial batch kept).
/// Shuffling and teacher forcing derive from `cfg.seed`.
pub fn train(
    params: LstmParams,
    train_segments: &[Segment],
    val_segments: &[Segment],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_segments.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut params = params;
    let mut state = AdamState::new(params.values().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_segments.len()).collect();
    let mut curve = LossCurve::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example<'_>> = idx
                .iter()
                .map(|&i| {
                    (
                        train_segments[i].x.as_slice(),
                        train_segments[i].y.as_slice(),
                    )
                })
                .collect();
            let seed = rng.random::<u64>();
            let (loss, mut grads) = match backward(&params, &batch, cfg.tf_prob, seed) {
                Ok(r) => r,
                Err(Error::NumericalDivergence(_)) => {
                    return Ok(TrainOutcome {
                        params,
                        curve,
                        diverged: true,
                    })
                }
                Err(e) => return Err(e),
            };
            epoch_loss += loss * batch.len() as f64;
            clip_gradients(&mut grads, cfg.grad_clip_value);
            let before = params.values().to_vec();
            adam_step(params.values_mut(), &grads, &mut state, cfg.learning_rate);
            if params.values().iter().any(|v| !v.is_finite()) {
                params.values_mut().copy_from_slice(&before);
                return Ok(TrainOutcome {
                    params,
                    curve,
                    diverged: true,
                });
            }
        }
        curve.train.push(epoch_loss / train_segments.len() as f64);
        let val = if val_segments.is_empty() {
            None
        } else {
            match validation_loss(&params, val_segments) {
                Ok(v) => Some(v),
                Err(Error::NumericalDivergence(_)) => {
                    curve.validation.push(None);
                    return Ok(TrainOutcome {
                        params,
                        curve,
                        diverged: true,
                    });
                }
                Err(e) => return Err(e),
            }
        };
        curve.validation.push(val);
    }
    Ok(TrainOutcome {
        params,
        curve,
        diverged: false,
    })
}
