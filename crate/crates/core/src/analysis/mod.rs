//! Speed-error analysis: sensor-type identification, per-speed error
//! statistics, the speed-dependent variance model and its fit, dwell PMFs and
//! cross-source RMSE tables.

mod binning;
mod classify;
mod fit;
mod pmf;
pub mod report;
mod variance;

pub use binning::{bin_errors, rmse_by_interval, BinOptions, BinStat, BinnedStats};
pub use classify::{classify_sensor, SensorVerdict, Verdict, DEFAULT_MIN_LOW_SPEED_REF_SAMPLES};
pub use fit::{fit_variance_model, fit_variance_points, FitOptions, Weighting};
pub use pmf::{pmf, PmfBin, PmfTable};
pub use variance::{eval_variance, VarianceCoefficients, VarianceModel};

use thiserror::Error;

/// Default speed interval width, km/h.
pub const DEFAULT_INTERVAL_KMH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    EmptyInput,
    #[error("source `{0}` has no samples")]
    EmptySource(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("need at least {needed} usable bins to fit, have {have}")]
    InsufficientBins { needed: usize, have: usize },
    #[error("variance fit diverged from every start")]
    FitDiverged,
}
