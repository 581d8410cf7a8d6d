use serde::Serialize;

use super::AnalysisError;
use crate::ingest::AlignedPair;

/// Reference samples in the low-speed band needed before a clean band can be
/// read as a passive sensor.
pub const DEFAULT_MIN_LOW_SPEED_REF_SAMPLES: usize = 10;
/// Lower edge of the reference low-speed band; below this the vehicle is
/// treated as standing still.
const REF_STANDSTILL_KMH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Passive,
    Active,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Passive => "Passive",
            Verdict::Active => "Active",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorVerdict {
    pub verdict: Verdict,
    pub cutoff_kmh: f64,
    /// OBD readings strictly between 0 and the cutoff.
    pub low_band_obd_readings: usize,
    /// Reference samples between standstill and the cutoff.
    pub low_speed_ref_samples: usize,
}

/// Passive sensors never report speeds in `(0, cutoff)`. Any such reading
/// marks the sensor active; an empty band only counts as passive when the
/// reference shows the vehicle actually moved that slowly.
pub fn classify_sensor(
    pairs: &[AlignedPair],
    cutoff_kmh: f64,
    min_low_speed_ref_samples: usize,
) -> Result<SensorVerdict, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if !(cutoff_kmh.is_finite() && cutoff_kmh > REF_STANDSTILL_KMH) {
        return Err(AnalysisError::InvalidOption(format!(
            "cutoff must exceed {REF_STANDSTILL_KMH} km/h, got {cutoff_kmh}"
        )));
    }
    let low_band_obd_readings = pairs
        .iter()
        .filter(|p| p.obd_kmh > 0.0 && p.obd_kmh < cutoff_kmh)
        .count();
    let low_speed_ref_samples = pairs
        .iter()
        .filter(|p| p.ref_kmh > REF_STANDSTILL_KMH && p.ref_kmh < cutoff_kmh)
        .count();
    let verdict = if low_band_obd_readings > 0 {
        Verdict::Active
    } else if low_speed_ref_samples >= min_low_speed_ref_samples.max(1) {
        Verdict::Passive
    } else {
        Verdict::Inconclusive
    };
    Ok(SensorVerdict {
        verdict,
        cutoff_kmh,
        low_band_obd_readings,
        low_speed_ref_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_pairs(obd: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<AlignedPair> {
        (0..=200)
            .map(|i| {
                let r = lo + (hi - lo) * i as f64 / 200.0;
                AlignedPair::new(i as f64 * 0.1, obd(r), r)
            })
            .collect()
    }

    #[test]
    fn low_readings_mean_active() {
        let pairs = ramp_pairs(|r| r.round(), 0.0, 10.0);
        let v = classify_sensor(&pairs, 3.0, 10).unwrap();
        assert_eq!(v.verdict, Verdict::Active);
        assert!(v.low_band_obd_readings > 0);
    }

    #[test]
    fn empty_band_with_slow_reference_means_passive() {
        let pairs = ramp_pairs(|r| if r < 3.0 { 0.0 } else { r.round() }, 0.0, 10.0);
        let v = classify_sensor(&pairs, 3.0, 10).unwrap();
        assert_eq!(v.verdict, Verdict::Passive);
        assert_eq!(v.low_band_obd_readings, 0);
        assert!(v.low_speed_ref_samples >= 10);
    }

    #[test]
    fn never_slow_is_inconclusive() {
        let pairs = ramp_pairs(|r| r.round(), 5.0, 60.0);
        assert_eq!(classify_sensor(&pairs, 3.0, 10).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn errors() {
        assert_eq!(classify_sensor(&[], 3.0, 10), Err(AnalysisError::EmptyInput));
        let pairs = ramp_pairs(|r| r, 0.0, 1.0);
        assert!(classify_sensor(&pairs, 0.2, 10).is_err());
    }
}
