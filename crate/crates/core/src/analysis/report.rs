//! The full analysis chain (align, classify, bin, fit, PMF, RMSE) and its
//! JSON / plot-CSV renderings.
//!
//! Rendered numbers are rounded to six significant digits and keys keep
//! declaration order, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use super::{
    bin_errors, classify_sensor, fit_variance_model, pmf, rmse_by_interval, AnalysisError,
    BinOptions, BinnedStats, FitOptions, PmfTable, SensorVerdict, VarianceModel,
    DEFAULT_INTERVAL_KMH, DEFAULT_MIN_LOW_SPEED_REF_SAMPLES,
};
use crate::ingest::{align, AlignmentSummary, IngestError, DEFAULT_MAX_GAP_S};
use crate::series::SpeedSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub max_gap_s: f64,
    pub cutoff_kmh: f64,
    pub min_low_speed_ref_samples: usize,
    pub bins: BinOptions,
    pub fit: FitOptions,
    pub pmf_interval_kmh: f64,
    pub rmse_interval_kmh: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            max_gap_s: DEFAULT_MAX_GAP_S,
            cutoff_kmh: 3.0,
            min_low_speed_ref_samples: DEFAULT_MIN_LOW_SPEED_REF_SAMPLES,
            // OBD readings are integer km/h
            bins: BinOptions {
                quantization_step_kmh: 1.0,
                ..BinOptions::default()
            },
            fit: FitOptions::default(),
            pmf_interval_kmh: DEFAULT_INTERVAL_KMH,
            rmse_interval_kmh: DEFAULT_INTERVAL_KMH,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// A variance fit result; a failed fit is recorded rather than aborting the
/// rest of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(VarianceModel),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub alignment: AlignmentSummary,
    pub sensor: SensorVerdict,
    pub error_bins: BinnedStats,
    pub variance_model: FitOutcome,
    /// Dwell distribution of the reference speed.
    pub pmf: PmfTable,
    pub rmse: BTreeMap<String, BinnedStats>,
}

pub fn build_report(
    obd: &SpeedSeries,
    reference: &SpeedSeries,
    opts: &ReportOptions,
) -> Result<AnalysisReport, ReportError> {
    let alignment = align(obd, reference, opts.max_gap_s)?;
    let pairs = &alignment.pairs;
    let sensor = classify_sensor(pairs, opts.cutoff_kmh, opts.min_low_speed_ref_samples)?;
    let error_bins = bin_errors(pairs, &opts.bins)?;
    let variance_model = match fit_variance_model(&error_bins, &opts.fit) {
        Ok(m) => FitOutcome::Fitted(m),
        Err(e) => FitOutcome::Failed(e.to_string()),
    };
    let pmf = pmf(reference, opts.pmf_interval_kmh)?;
    let source = if obd.source.is_empty() { "obd".to_string() } else { obd.source.clone() };
    let mut per_source = BTreeMap::new();
    per_source.insert(source, pairs.clone());
    let rmse = rmse_by_interval(&per_source, opts.rmse_interval_kmh)?;
    Ok(AnalysisReport {
        alignment: alignment.summary,
        sensor,
        error_bins,
        variance_model,
        pmf,
        rmse,
    })
}

/// Rounds to six significant digits; zero and non-finite values pass through.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Six-significant-digit text for CSV cells.
pub fn fmt_sig6(x: f64) -> String {
    round_sig6(x).to_string()
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to six significant digits.
pub fn to_stable_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Plot-ready CSV: per-bin error variance next to the fitted model.
pub fn variance_csv(bins: &BinnedStats, model: Option<&VarianceModel>) -> String {
    let mut out = String::from(
        "v_lo_kmh,v_hi_kmh,v_mid_kmh,count,variance_kmh2,sensor_variance_kmh2,model_variance_kmh2,usable\n",
    );
    for b in &bins.bins {
        let model_v = model.map_or(String::new(), |m| fmt_sig6(m.eval(b.v_mid_kmh())));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_sig6(b.v_lo_kmh),
            fmt_sig6(b.v_hi_kmh),
            fmt_sig6(b.v_mid_kmh()),
            b.count,
            fmt_sig6(b.variance_kmh2),
            fmt_sig6(b.sensor_variance_kmh2),
            model_v,
            b.usable
        );
    }
    out
}

pub fn pmf_csv(table: &PmfTable) -> String {
    let mut out = String::from("v_lo_kmh,v_hi_kmh,count,mass\n");
    for b in &table.bins {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig6(b.v_lo_kmh),
            fmt_sig6(b.v_hi_kmh),
            b.count,
            fmt_sig6(b.mass)
        );
    }
    out
}

pub fn rmse_csv(tables: &BTreeMap<String, BinnedStats>) -> String {
    let mut out = String::from("source,v_lo_kmh,v_hi_kmh,count,rmse_kmh\n");
    for (source, t) in tables {
        for b in &t.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                source,
                fmt_sig6(b.v_lo_kmh),
                fmt_sig6(b.v_hi_kmh),
                b.count,
                fmt_sig6(b.rmse_kmh)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_sig6(0.30950000001), 0.3095);
        assert_eq!(round_sig6(-0.000914912345), -0.000914912);
        assert_eq!(round_sig6(123456789.0), 123457000.0);
        assert_eq!(round_sig6(0.0), 0.0);
        assert_eq!(fmt_sig6(60.0), "60");
    }

    #[derive(Serialize)]
    struct Sample {
        zeta: f64,
        alpha: Vec<f64>,
        n: usize,
    }

    #[test]
    fn stable_json_keeps_field_order() {
        let s = Sample { zeta: 1.0 / 3.0, alpha: vec![2.0 / 3.0], n: 7 };
        let text = to_stable_json(&s).unwrap();
        assert_eq!(text, "{\n  \"zeta\": 0.333333,\n  \"alpha\": [\n    0.666667\n  ],\n  \"n\": 7\n}\n");
    }
}
