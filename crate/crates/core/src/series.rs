//! Timestamped speed series shared by the simulator, the ECU client and the
//! analysis pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::KMH_PER_MPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedUnit {
    Kmh,
    Mps,
}

impl SpeedUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeedUnit::Kmh => "kmh",
            SpeedUnit::Mps => "mps",
        }
    }

    /// Converts `value` expressed in `self` into km/h.
    pub fn to_kmh(self, value: f64) -> f64 {
        match self {
            SpeedUnit::Kmh => value,
            SpeedUnit::Mps => value * KMH_PER_MPS,
        }
    }

    /// Converts `value` expressed in `self` into m/s.
    pub fn to_mps(self, value: f64) -> f64 {
        match self {
            SpeedUnit::Kmh => value / KMH_PER_MPS,
            SpeedUnit::Mps => value,
        }
    }
}

impl fmt::Display for SpeedUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpeedUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "kmh" => Ok(SpeedUnit::Kmh),
            "mps" => Ok(SpeedUnit::Mps),
            other => Err(format!("unknown speed unit `{other}` (expected kmh or mps)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub timestamp_s: f64,
    pub speed: f64,
}

/// Ordered speed samples with a single unit and source tag.
///
/// Timestamps are strictly increasing and speeds are non-negative; the
/// constructors that take foreign data check both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedSeries {
    pub unit: SpeedUnit,
    pub source: String,
    pub samples: Vec<SpeedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesViolation {
    NonMonotone { index: usize },
    BadSpeed { index: usize },
}

impl SpeedSeries {
    pub fn new(unit: SpeedUnit, source: impl Into<String>) -> Self {
        Self {
            unit,
            source: source.into(),
            samples: Vec::new(),
        }
    }

    pub fn from_samples(
        unit: SpeedUnit,
        source: impl Into<String>,
        samples: Vec<SpeedSample>,
    ) -> Result<Self, SeriesViolation> {
        let series = Self {
            unit,
            source: source.into(),
            samples,
        };
        series.check()?;
        Ok(series)
    }

    pub fn check(&self) -> Result<(), SeriesViolation> {
        for (i, s) in self.samples.iter().enumerate() {
            if !s.timestamp_s.is_finite() {
                return Err(SeriesViolation::NonMonotone { index: i });
            }
            if !(s.speed.is_finite() && s.speed >= 0.0) {
                return Err(SeriesViolation::BadSpeed { index: i });
            }
            if i > 0 && s.timestamp_s <= self.samples[i - 1].timestamp_s {
                return Err(SeriesViolation::NonMonotone { index: i });
            }
        }
        Ok(())
    }

    /// Appends a sample; the caller keeps timestamps increasing.
    pub fn push(&mut self, timestamp_s: f64, speed: f64) {
        self.samples.push(SpeedSample { timestamp_s, speed });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.samples.first().map(|s| s.timestamp_s)
    }

    pub fn end(&self) -> Option<f64> {
        self.samples.last().map(|s| s.timestamp_s)
    }

    pub fn duration_s(&self) -> f64 {
        match (self.start(), self.end()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Same series re-expressed in `unit`.
    pub fn to_unit(&self, unit: SpeedUnit) -> SpeedSeries {
        if unit == self.unit {
            return self.clone();
        }
        let samples = self
            .samples
            .iter()
            .map(|s| SpeedSample {
                timestamp_s: s.timestamp_s,
                speed: unit_convert(s.speed, self.unit, unit),
            })
            .collect();
        SpeedSeries {
            unit,
            source: self.source.clone(),
            samples,
        }
    }

    pub fn speeds_kmh(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |s| self.unit.to_kmh(s.speed))
    }

    /// Linear interpolation at `t`; `None` outside the covered time range.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let idx = self.bracket(t)?;
        let lo = self.samples[idx];
        if lo.timestamp_s == t || idx + 1 == self.samples.len() {
            return Some(lo.speed);
        }
        let hi = self.samples[idx + 1];
        let frac = (t - lo.timestamp_s) / (hi.timestamp_s - lo.timestamp_s);
        Some(lo.speed + frac * (hi.speed - lo.speed))
    }

    /// Index `i` with `samples[i].t <= t < samples[i+1].t`, or the last index
    /// when `t` equals the final timestamp.
    pub(crate) fn bracket(&self, t: f64) -> Option<usize> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t < first.timestamp_s || t > last.timestamp_s {
            return None;
        }
        let upper = self.samples.partition_point(|s| s.timestamp_s <= t);
        Some(upper - 1)
    }
}

fn unit_convert(value: f64, from: SpeedUnit, to: SpeedUnit) -> f64 {
    match (from, to) {
        (SpeedUnit::Kmh, SpeedUnit::Mps) => value / KMH_PER_MPS,
        (SpeedUnit::Mps, SpeedUnit::Kmh) => value * KMH_PER_MPS,
        _ => value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> SpeedSeries {
        let samples = (0..=10)
            .map(|i| SpeedSample {
                timestamp_s: i as f64,
                speed: 3.6 * i as f64,
            })
            .collect();
        SpeedSeries::from_samples(SpeedUnit::Kmh, "ref", samples).unwrap()
    }

    #[test]
    fn interpolates_inside_and_rejects_outside() {
        let s = ramp();
        assert_eq!(s.interpolate(5.0), Some(18.0));
        assert!((s.interpolate(2.5).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(s.interpolate(10.0), Some(36.0));
        assert_eq!(s.interpolate(-0.1), None);
        assert_eq!(s.interpolate(10.1), None);
    }

    #[test]
    fn rejects_repeated_timestamps() {
        let samples = vec![
            SpeedSample { timestamp_s: 0.0, speed: 1.0 },
            SpeedSample { timestamp_s: 0.0, speed: 1.0 },
        ];
        assert_eq!(
            SpeedSeries::from_samples(SpeedUnit::Kmh, "x", samples),
            Err(SeriesViolation::NonMonotone { index: 1 })
        );
    }

    #[test]
    fn unit_round_trip() {
        let s = ramp();
        let back = s.to_unit(SpeedUnit::Mps).to_unit(SpeedUnit::Kmh);
        for (a, b) in s.samples.iter().zip(&back.samples) {
            assert!((a.speed - b.speed).abs() < 1e-12);
        }
        assert_eq!("mps".parse::<SpeedUnit>(), Ok(SpeedUnit::Mps));
        assert!("knots".parse::<SpeedUnit>().is_err());
    }
}
