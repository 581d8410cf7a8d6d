use serde::Serialize;

use super::AnalysisError;
use crate::series::SpeedSeries;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfBin {
    pub v_lo_kmh: f64,
    pub v_hi_kmh: f64,
    pub count: usize,
    pub mass: f64,
}

/// Share of samples per speed interval `[0, w), [w, 2w), ...`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfTable {
    pub interval_kmh: f64,
    pub samples: usize,
    pub bins: Vec<PmfBin>,
}

impl PmfTable {
    pub fn total_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.mass).sum()
    }

    /// Mass of the interval containing `v_kmh`.
    pub fn mass_at(&self, v_kmh: f64) -> f64 {
        self.bins
            .iter()
            .find(|b| v_kmh >= b.v_lo_kmh && v_kmh < b.v_hi_kmh)
            .map_or(0.0, |b| b.mass)
    }
}

pub fn pmf(series: &SpeedSeries, interval_kmh: f64) -> Result<PmfTable, AnalysisError> {
    if series.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if !(interval_kmh.is_finite() && interval_kmh > 0.0) {
        return Err(AnalysisError::InvalidOption(format!(
            "interval must be > 0, got {interval_kmh}"
        )));
    }
    let mut counts: Vec<usize> = Vec::new();
    for v in series.speeds_kmh() {
        let idx = (v.max(0.0) / interval_kmh).floor() as usize;
        if idx >= counts.len() {
            counts.resize(idx + 1, 0);
        }
        counts[idx] += 1;
    }
    let n = series.len();
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| PmfBin {
            v_lo_kmh: i as f64 * interval_kmh,
            v_hi_kmh: (i + 1) as f64 * interval_kmh,
            count,
            mass: count as f64 / n as f64,
        })
        .collect();
    Ok(PmfTable {
        interval_kmh,
        samples: n,
        bins,
    })
}
