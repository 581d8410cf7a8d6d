//! Speed log CSV I/O and time alignment of OBD readings against a reference.
//!
//! Log schema (UTF-8, one record per line):
//!
//! ```text
//! timestamp_s,speed,unit,source
//! 1700000000.0,60,kmh,obd
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::series::{SpeedSample, SpeedSeries, SpeedUnit};

pub const CSV_HEADER: [&str; 4] = ["timestamp_s", "speed", "unit", "source"];
pub const DEFAULT_MAX_GAP_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("line {line}: timestamp does not increase")]
    NonMonotoneTimestamps { line: u64 },
    #[error("line {line}: {reason}")]
    UnparsableRow { line: u64, reason: String },
    #[error("empty series")]
    EmptyInput,
    #[error("OBD and reference time ranges do not overlap")]
    NoOverlap,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Reads a speed log, normalizing speeds to km/h.
pub fn read_csv(path: impl AsRef<Path>) -> Result<SpeedSeries, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_from(file)
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<SpeedSeries, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(IngestError::SchemaMismatch(format!(
            "expected header `{}`, found `{}`",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut series = SpeedSeries::new(SpeedUnit::Kmh, "");
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(IngestError::UnparsableRow {
                    line,
                    reason: e.to_string(),
                })
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        let bad = |reason: String| IngestError::UnparsableRow { line, reason };
        if record.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        let t: f64 = record[0]
            .parse()
            .map_err(|_| bad(format!("bad timestamp `{}`", &record[0])))?;
        let v: f64 = record[1]
            .parse()
            .map_err(|_| bad(format!("bad speed `{}`", &record[1])))?;
        let unit: SpeedUnit = record[2].parse().map_err(bad)?;
        if !t.is_finite() {
            return Err(bad("timestamp is not finite".into()));
        }
        if !(v.is_finite() && v >= 0.0) {
            return Err(bad(format!("speed {v} must be finite and >= 0")));
        }
        if series.is_empty() {
            series.source = record[3].to_string();
        }
        if series.end().is_some_and(|prev| t <= prev) {
            return Err(IngestError::NonMonotoneTimestamps { line });
        }
        series.push(t, unit.to_kmh(v));
    }
    Ok(series)
}

pub fn write_csv(series: &SpeedSeries, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_to(series, file)
}

pub fn write_csv_to<W: Write>(series: &SpeedSeries, writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in &series.samples {
        w.write_record([
            s.timestamp_s.to_string(),
            s.speed.to_string(),
            series.unit.to_string(),
            series.source.clone(),
        ])?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: PathBuf::from("<writer>"),
        source,
    })?;
    Ok(())
}

/// An OBD reading paired with the reference interpolated at its timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignedPair {
    pub timestamp_s: f64,
    pub obd_kmh: f64,
    pub ref_kmh: f64,
    /// `obd_kmh - ref_kmh`.
    pub error_kmh: f64,
}

impl AlignedPair {
    pub fn new(timestamp_s: f64, obd_kmh: f64, ref_kmh: f64) -> Self {
        Self {
            timestamp_s,
            obd_kmh,
            ref_kmh,
            error_kmh: obd_kmh - ref_kmh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentSummary {
    pub obd_samples: usize,
    pub ref_samples: usize,
    pub aligned: usize,
    pub dropped_out_of_range: usize,
    pub dropped_gap: usize,
    pub overlap_start_s: f64,
    pub overlap_end_s: f64,
    pub max_gap_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    pub summary: AlignmentSummary,
}

/// Pairs each OBD sample with the linearly interpolated reference speed.
///
/// Samples outside the reference time range, or whose bracketing reference
/// samples are more than `max_gap_s` apart, are dropped.
pub fn align(
    obd: &SpeedSeries,
    reference: &SpeedSeries,
    max_gap_s: f64,
) -> Result<Alignment, IngestError> {
    let (Some(o0), Some(o1), Some(r0), Some(r1)) =
        (obd.start(), obd.end(), reference.start(), reference.end())
    else {
        return Err(IngestError::EmptyInput);
    };
    if o1 < r0 || r1 < o0 {
        return Err(IngestError::NoOverlap);
    }
    let obd = obd.to_unit(SpeedUnit::Kmh);
    let reference = reference.to_unit(SpeedUnit::Kmh);
    let refs: &[SpeedSample] = &reference.samples;

    let mut pairs = Vec::with_capacity(obd.len());
    let mut dropped_out_of_range = 0;
    let mut dropped_gap = 0;
    for s in &obd.samples {
        let Some(idx) = reference.bracket(s.timestamp_s) else {
            dropped_out_of_range += 1;
            continue;
        };
        let lo = refs[idx];
        let ref_kmh = if lo.timestamp_s == s.timestamp_s {
            lo.speed
        } else {
            let hi = refs[idx + 1];
            if hi.timestamp_s - lo.timestamp_s > max_gap_s {
                dropped_gap += 1;
                continue;
            }
            let frac = (s.timestamp_s - lo.timestamp_s) / (hi.timestamp_s - lo.timestamp_s);
            lo.speed + frac * (hi.speed - lo.speed)
        };
        pairs.push(AlignedPair::new(s.timestamp_s, s.speed, ref_kmh));
    }

    let summary = AlignmentSummary {
        obd_samples: obd.len(),
        ref_samples: reference.len(),
        aligned: pairs.len(),
        dropped_out_of_range,
        dropped_gap,
        overlap_start_s: o0.max(r0),
        overlap_end_s: o1.min(r1),
        max_gap_s,
    };
    Ok(Alignment { pairs, summary })
}
