//! Forecasting models behind a common interface.

pub mod es;
pub mod external;
pub mod lstm;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::SegmentKey;

pub use es::{es_forecast, EsConfig, SmoothingLevel};
pub use external::{external_finetune, external_forecast, AdapterEndpoint, AdapterMode};
pub use lstm::{lstm_forward, lstm_predict, LstmParams};

/// A model that maps a history to `horizon` future values.
pub trait Forecaster {
    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>>;
}

/// Repeats the last observed value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Forecaster for Persistence {
    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        let last = *history.last().ok_or(crate::Error::EmptyHistory)?;
        Ok(vec![last; horizon])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    #[serde(flatten)]
    pub key: SegmentKey,
    pub y_hat: Vec<f64>,
}

/// Forecasts every segment from its history, in parallel, keeping order.
pub fn forecast_segments<F>(
    model: &F,
    segments: &[crate::types::Segment],
) -> Result<Vec<ForecastResult>>
where
    F: Forecaster + Sync + ?Sized,
{
    use rayon::prelude::*;
    segments
        .par_iter()
        .map(|s| {
            Ok(ForecastResult {
                key: s.key(),
                y_hat: model.forecast(&s.x, s.y.len())?,
            })
        })
        .collect()
}
