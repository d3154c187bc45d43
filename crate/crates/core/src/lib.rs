//! Intracranial-pressure forecasting pipeline: preprocessing of raw ICP
//! waveforms, (history, target) segmentation, exponential-smoothing and
//! encoder-decoder LSTM forecasters, nested MAE/MSE evaluation and
//! patient-grouped cross-validation. External models plug in through a
//! line-delimited JSON adapter process.

pub mod config;
pub mod cv;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod io;
pub mod preprocess;
pub mod segment;
pub mod synth;
pub mod train;
pub mod types;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use eval::{aggregate, MetricsReport, SegmentScore};
pub use forecast::{ForecastResult, Forecaster, LstmParams};
pub use types::*;
