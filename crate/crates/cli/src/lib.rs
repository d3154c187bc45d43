//! Command-line driver: file-based pipeline stages around `icpcast-core`.
//!
//! Every stage is a pure function of its input files, the configuration and
//! the seed; outputs are byte-identical across reruns. Wall-clock timestamps
//! go only to the `run.log` sidecar.

pub mod args;
pub mod commands;
pub mod logging;
pub mod report;

use anyhow::Result;
use icpcast_core::Error;

pub use args::Cli;

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_ADAPTER: i32 = 3;

/// Process exit code for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NumericalDivergence(_) => EXIT_DIVERGENCE,
                Error::AdapterProtocol(_)
                | Error::AdapterTimeout(_)
                | Error::BadPrediction { .. } => EXIT_ADAPTER,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_INPUT
}

pub fn run(cli: &Cli) -> Result<()> {
    commands::dispatch(cli)
}
