use std::collections::BTreeMap;

use serde::Serialize;

use super::{AnalysisError, DEFAULT_INTERVAL_KMH};
use crate::ingest::AlignedPair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinOptions {
    pub bin_width_kmh: f64,
    /// Bins with fewer samples are kept in the table but not fitted.
    pub min_count: usize,
    /// Reporting resolution of the OBD readings. When non-zero, the
    /// rounding contribution `step^2 / 12` is removed from each bin's
    /// variance to estimate the sensor's own error variance.
    pub quantization_step_kmh: f64,
}

impl Default for BinOptions {
    fn default() -> Self {
        Self {
            bin_width_kmh: DEFAULT_INTERVAL_KMH,
            min_count: 30,
            quantization_step_kmh: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub v_lo_kmh: f64,
    pub v_hi_kmh: f64,
    pub count: usize,
    pub mean_error_kmh: f64,
    /// Unbiased (n - 1) variance of the error.
    pub variance_kmh2: f64,
    /// `variance_kmh2` less the quantization contribution, floored at zero.
    pub sensor_variance_kmh2: f64,
    pub rmse_kmh: f64,
    pub usable: bool,
}

impl BinStat {
    pub fn v_mid_kmh(&self) -> f64 {
        0.5 * (self.v_lo_kmh + self.v_hi_kmh)
    }
}

/// Error statistics over contiguous reference-speed bins starting at 0 km/h.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedStats {
    pub bin_width_kmh: f64,
    pub min_count: usize,
    pub quantization_step_kmh: f64,
    pub bins: Vec<BinStat>,
}

impl BinnedStats {
    pub fn usable(&self) -> impl Iterator<Item = &BinStat> {
        self.bins.iter().filter(|b| b.usable)
    }
}

/// Groups pairs by reference speed and computes per-bin error statistics.
pub fn bin_errors(pairs: &[AlignedPair], opts: &BinOptions) -> Result<BinnedStats, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let width = opts.bin_width_kmh;
    if !(width.is_finite() && width > 0.0) {
        return Err(AnalysisError::InvalidOption(format!("bin width must be > 0, got {width}")));
    }
    let step = opts.quantization_step_kmh;
    if !(step.is_finite() && step >= 0.0) {
        return Err(AnalysisError::InvalidOption(format!("quantization step must be >= 0, got {step}")));
    }

    let mut groups: Vec<Vec<f64>> = Vec::new();
    for p in pairs {
        let idx = (p.ref_kmh.max(0.0) / width).floor() as usize;
        if idx >= groups.len() {
            groups.resize_with(idx + 1, Vec::new);
        }
        groups[idx].push(p.error_kmh);
    }

    let quant_var = step * step / 12.0;
    let bins = groups
        .iter()
        .enumerate()
        .map(|(i, errs)| {
            let n = errs.len();
            let (mean, var, rmse) = moments(errs);
            BinStat {
                v_lo_kmh: i as f64 * width,
                v_hi_kmh: (i + 1) as f64 * width,
                count: n,
                mean_error_kmh: mean,
                variance_kmh2: var,
                sensor_variance_kmh2: (var - quant_var).max(0.0),
                rmse_kmh: rmse,
                usable: n >= opts.min_count.max(2),
            }
        })
        .collect();

    Ok(BinnedStats {
        bin_width_kmh: width,
        min_count: opts.min_count,
        quantization_step_kmh: step,
        bins,
    })
}

/// (mean, unbiased variance, rmse); zeros for empty input, zero variance for
/// a single sample.
fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let rmse = (xs.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    (mean, var, rmse)
}

/// Per-source RMSE tables over reference-speed intervals.
pub fn rmse_by_interval(
    pairs_per_source: &BTreeMap<String, Vec<AlignedPair>>,
    interval_kmh: f64,
) -> Result<BTreeMap<String, BinnedStats>, AnalysisError> {
    if pairs_per_source.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let opts = BinOptions {
        bin_width_kmh: interval_kmh,
        min_count: 1,
        quantization_step_kmh: 0.0,
    };
    pairs_per_source
        .iter()
        .map(|(source, pairs)| {
            if pairs.is_empty() {
                return Err(AnalysisError::EmptySource(source.clone()));
            }
            Ok((source.clone(), bin_errors(pairs, &opts)?))
        })
        .collect()
}
