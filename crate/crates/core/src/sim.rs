//! Synthetic OBD speed readings from a ground-truth profile.
//!
//! Each reading goes through the same chain a real ECU applies: measurement
//! noise (speed-dependent variance), the sensor's low-speed cutoff, then
//! integer quantization in the reporting unit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::VarianceCoefficients;
use crate::codec::{quantize_speed, QuantizedSpeed, ReportUnit};
use crate::series::{SpeedSeries, SpeedUnit};
use crate::KMH_PER_MPS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("empty input series")]
    EmptyInput,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid profile segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    /// Variable-reluctance wheel sensor; ECU ignores it at crawling speed.
    PassiveWss,
    /// Hall / magnetoresistive wheel sensor; resolves down to ~0.1 km/h.
    ActiveWss,
    /// Transmission output speed sensor.
    TransmissionVss,
}

impl std::str::FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "passive" | "passivewss" | "pwss" => Ok(SensorKind::PassiveWss),
            "active" | "activewss" | "awss" => Ok(SensorKind::ActiveWss),
            "vss" | "transmission" | "transmissionvss" => Ok(SensorKind::TransmissionVss),
            other => Err(format!("unknown sensor kind `{other}` (passive, active or vss)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub kind: SensorKind,
    /// Passive WSS and VSS readings below this report as zero.
    pub passive_cutoff_kmh: f64,
    /// Active WSS readings below this report as zero.
    pub active_floor_kmh: f64,
    /// Measurement-noise variance model over km/h; `None` disables noise.
    pub noise: Option<VarianceCoefficients>,
    /// Variance multiplier for `TransmissionVss`. There is no measured VSS
    /// variance, so this stays 1 unless the caller has data.
    pub vss_noise_scale: f64,
    pub sample_rate_hz: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            kind: SensorKind::PassiveWss,
            passive_cutoff_kmh: 3.0,
            active_floor_kmh: 0.1,
            noise: None,
            vss_noise_scale: 1.0,
            sample_rate_hz: 10.0,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.active_floor_kmh >= 0.0 && self.active_floor_kmh < self.passive_cutoff_kmh) {
            return bad(format!(
                "need 0 <= active floor ({}) < passive cutoff ({})",
                self.active_floor_kmh, self.passive_cutoff_kmh
            ));
        }
        if !self.passive_cutoff_kmh.is_finite() {
            return bad("passive cutoff must be finite".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate must be > 0, got {}", self.sample_rate_hz));
        }
        if !(self.vss_noise_scale.is_finite() && self.vss_noise_scale >= 0.0) {
            return bad(format!("VSS noise scale must be >= 0, got {}", self.vss_noise_scale));
        }
        if let Some(n) = &self.noise {
            if ![n.a, n.b, n.c, n.d].iter().all(|x| x.is_finite()) || n.a < 0.0 || n.c < 0.0 {
                return bad("noise model needs finite coefficients with a, c >= 0".into());
            }
        }
        Ok(())
    }

    /// Readings strictly below this value (km/h) report zero.
    pub fn cutoff_kmh(&self) -> f64 {
        match self.kind {
            SensorKind::ActiveWss => self.active_floor_kmh,
            SensorKind::PassiveWss | SensorKind::TransmissionVss => self.passive_cutoff_kmh,
        }
    }

    fn variance_scale(&self) -> f64 {
        match self.kind {
            SensorKind::TransmissionVss => self.vss_noise_scale,
            _ => 1.0,
        }
    }
}

/// One simulated reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    /// Truth plus noise in km/h, before clamping, cutoff and quantization.
    pub noisy_kmh: f64,
    pub quantized: QuantizedSpeed,
}

/// Stateful reading generator: a validated config plus its seeded RNG.
#[derive(Debug, Clone)]
pub struct SensorSimulator {
    cfg: SimConfig,
    rng: ChaCha8Rng,
}

impl SensorSimulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Ok(Self { cfg, rng })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn read(&mut self, truth_mps: f64, unit: ReportUnit) -> Reading {
        let truth_kmh = truth_mps.max(0.0) * KMH_PER_MPS;
        let noisy_kmh = match &self.cfg.noise {
            Some(model) => {
                let var = model.eval(truth_kmh) * self.cfg.variance_scale();
                let z: f64 = StandardNormal.sample(&mut self.rng);
                truth_kmh + var.max(0.0).sqrt() * z
            }
            None => truth_kmh,
        };
        let mut sensed_kmh = noisy_kmh.max(0.0);
        if sensed_kmh < self.cfg.cutoff_kmh() {
            sensed_kmh = 0.0;
        }
        let quantized = quantize_speed(sensed_kmh / KMH_PER_MPS, unit)
            .expect("sensed speed is finite");
        Reading {
            noisy_kmh,
            quantized,
        }
    }
}

/// Samples `truth` at the configured rate and returns integer km/h OBD
/// readings. Deterministic for a fixed config (seed included).
pub fn simulate(truth: &SpeedSeries, cfg: &SimConfig) -> Result<SpeedSeries, SimError> {
    if truth.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let mut sensor = SensorSimulator::new(cfg.clone())?;
    let truth_mps = truth.to_unit(SpeedUnit::Mps);
    let t0 = truth_mps.start().expect("non-empty");
    let duration = truth_mps.duration_s();
    let n = (duration * cfg.sample_rate_hz + 1e-9).floor() as usize + 1;

    let mut out = SpeedSeries::new(SpeedUnit::Kmh, "obd");
    out.samples.reserve(n);
    for k in 0..n {
        let t = t0 + k as f64 / cfg.sample_rate_hz;
        let Some(v) = truth_mps.interpolate(t) else { break };
        let reading = sensor.read(v, ReportUnit::KmPerHour);
        out.push(t, reading.quantized.value as f64);
    }
    Ok(out)
}

/// One leg of a piecewise-linear profile; speeds in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub duration_s: f64,
    pub start_mps: f64,
    pub end_mps: f64,
}

impl ProfileSegment {
    pub fn new(duration_s: f64, start_mps: f64, end_mps: f64) -> Self {
        Self {
            duration_s,
            start_mps,
            end_mps,
        }
    }
}

impl std::str::FromStr for ProfileSegment {
    type Err = String;

    /// `duration_s:start_kmh:end_kmh`, e.g. `30:0:50`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [d, v0, v1] = parts.as_slice() else {
            return Err(format!("segment `{s}` is not duration:start_kmh:end_kmh"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("segment `{s}`: {e}"));
        Ok(Self::new(num(d)?, num(v0)? / KMH_PER_MPS, num(v1)? / KMH_PER_MPS))
    }
}

/// Speed (km/h) below which the urban generator counts a sample as crawling.
pub const URBAN_LOW_BAND_KMH: f64 = 4.0;

/// Seeded stop-and-go traffic: crawling/standing blocks below 4 km/h
/// alternate with cruise blocks at or above 4 km/h. The crawling blocks add
/// up to exactly `low_fraction * duration_s` seconds.
pub fn urban_segments(duration_s: f64, low_fraction: f64, seed: u64) -> Result<Vec<ProfileSegment>, SimError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidConfig(format!("duration must be > 0, got {duration_s}")));
    }
    if !(0.0..=1.0).contains(&low_fraction) {
        return Err(SimError::InvalidConfig(format!("low fraction must be in [0, 1], got {low_fraction}")));
    }
    const CRAWL_MAX_KMH: f64 = 3.8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut low_left = low_fraction * duration_s;
    let mut high_left = duration_s - low_left;
    let mut segs = Vec::new();
    let mut v = 0.0_f64;
    let kmh = |x: f64| x / KMH_PER_MPS;

    while low_left > 1e-9 || high_left > 1e-9 {
        let block = low_left.min(rng.random_range(15.0..40.0));
        let mut left = block;
        while left > 1e-9 {
            let d = left.min(rng.random_range(3.0..8.0));
            let next = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..CRAWL_MAX_KMH) };
            segs.push(ProfileSegment::new(d, kmh(v), kmh(next)));
            v = next;
            left -= d;
        }
        low_left -= block;

        let block = high_left.min(rng.random_range(25.0..60.0));
        if block > 1e-9 {
            let cruise = rng.random_range(15.0..60.0);
            let floor = URBAN_LOW_BAND_KMH + 0.05;
            segs.push(ProfileSegment::new(0.25 * block, kmh(floor), kmh(cruise)));
            segs.push(ProfileSegment::new(0.5 * block, kmh(cruise), kmh(cruise)));
            segs.push(ProfileSegment::new(0.25 * block, kmh(cruise), kmh(floor)));
            v = CRAWL_MAX_KMH;
            high_left -= block;
        }
    }
    Ok(segs)
}

/// Piecewise-linear truth profile in m/s starting at t = 0, sampled at
/// `rate_hz` including the final endpoint.
pub fn make_profile(segments: &[ProfileSegment], rate_hz: f64) -> Result<SpeedSeries, SimError> {
    if segments.is_empty() {
        return Err(SimError::EmptyInput);
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(SimError::InvalidConfig(format!("sample rate must be > 0, got {rate_hz}")));
    }
    let mut bounds = Vec::with_capacity(segments.len());
    let mut total = 0.0;
    for (index, seg) in segments.iter().enumerate() {
        let invalid = |reason: &str| SimError::InvalidSegment {
            index,
            reason: reason.to_string(),
        };
        if !(seg.duration_s.is_finite() && seg.duration_s > 0.0) {
            return Err(invalid("duration must be > 0"));
        }
        if !(seg.start_mps.is_finite() && seg.start_mps >= 0.0)
            || !(seg.end_mps.is_finite() && seg.end_mps >= 0.0)
        {
            return Err(invalid("speeds must be finite and >= 0"));
        }
        total += seg.duration_s;
        bounds.push(total);
    }

    let n = (total * rate_hz + 1e-9).floor() as usize + 1;
    let mut out = SpeedSeries::new(SpeedUnit::Mps, "truth");
    out.samples.reserve(n);
    let mut seg_idx = 0;
    for k in 0..n {
        let t = k as f64 / rate_hz;
        while seg_idx + 1 < segments.len() && t >= bounds[seg_idx] {
            seg_idx += 1;
        }
        let seg = &segments[seg_idx];
        let seg_start = bounds[seg_idx] - seg.duration_s;
        let frac = ((t - seg_start) / seg.duration_s).clamp(0.0, 1.0);
        out.push(t, seg.start_mps + frac * (seg.end_mps - seg.start_mps));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_kmh(kmh: f64, secs: f64) -> SpeedSeries {
        let v = kmh / KMH_PER_MPS;
        make_profile(&[ProfileSegment::new(secs, v, v)], 10.0).unwrap()
    }

    fn sim(truth: &SpeedSeries, kind: SensorKind) -> Vec<f64> {
        let cfg = SimConfig {
            kind,
            ..SimConfig::default()
        };
        simulate(truth, &cfg).unwrap().samples.iter().map(|s| s.speed).collect()
    }

    #[test]
    fn passes_through_above_cutoff() {
        let out = sim(&constant_kmh(60.0, 5.0), SensorKind::PassiveWss);
        assert_eq!(out.len(), 51);
        assert!(out.iter().all(|&v| v == 60.0));
    }

    #[test]
    fn passive_drops_crawl_speed_active_keeps_it() {
        let truth = constant_kmh(2.0, 5.0);
        assert!(sim(&truth, SensorKind::PassiveWss).iter().all(|&v| v == 0.0));
        assert!(sim(&truth, SensorKind::TransmissionVss).iter().all(|&v| v == 0.0));
        assert!(sim(&truth, SensorKind::ActiveWss).iter().all(|&v| v == 2.0));
        // below the active floor
        assert!(sim(&constant_kmh(0.05, 1.0), SensorKind::ActiveWss).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn profile_shapes() {
        let flat = make_profile(&[ProfileSegment::new(10.0, 0.0, 0.0)], 10.0).unwrap();
        assert!(flat.samples.iter().all(|s| s.speed == 0.0));
        let ramp = make_profile(&[ProfileSegment::new(10.0, 0.0, 10.0)], 10.0).unwrap();
        let last = ramp.samples.last().unwrap();
        assert_eq!((last.timestamp_s, last.speed), (10.0, 10.0));
        assert!((ramp.interpolate(2.5).unwrap() - 2.5).abs() < 1e-12);

        let multi = make_profile(
            &[
                ProfileSegment::new(4.0, 0.0, 4.0),
                ProfileSegment::new(6.0, 4.0, 4.0),
                ProfileSegment::new(2.5, 4.0, 0.0),
            ],
            4.0,
        )
        .unwrap();
        assert_eq!(multi.duration_s(), 12.5);
        assert_eq!(multi.samples.last().unwrap().speed, 0.0);
        assert!(multi.check().is_ok());
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(
            make_profile(&[ProfileSegment::new(0.0, 0.0, 1.0)], 10.0),
            Err(SimError::InvalidSegment { index: 0, .. })
        ));
        assert!(matches!(
            make_profile(&[ProfileSegment::new(1.0, 0.0, 1.0), ProfileSegment::new(1.0, -1.0, 1.0)], 10.0),
            Err(SimError::InvalidSegment { index: 1, .. })
        ));
        assert_eq!(make_profile(&[], 10.0), Err(SimError::EmptyInput));
        let empty = SpeedSeries::new(SpeedUnit::Mps, "truth");
        assert_eq!(simulate(&empty, &SimConfig::default()), Err(SimError::EmptyInput));
        let truth = constant_kmh(10.0, 1.0);
        for cfg in [
            SimConfig { active_floor_kmh: 3.0, ..SimConfig::default() },
            SimConfig { sample_rate_hz: 0.0, ..SimConfig::default() },
            SimConfig { active_floor_kmh: -0.1, ..SimConfig::default() },
        ] {
            assert!(matches!(simulate(&truth, &cfg), Err(SimError::InvalidConfig(_))));
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let truth = make_profile(&[ProfileSegment::new(60.0, 0.0, 25.0)], 10.0).unwrap();
        let cfg = SimConfig {
            noise: Some(VarianceCoefficients::PASSIVE_WSS),
            rng_seed: 42,
            ..SimConfig::default()
        };
        assert_eq!(simulate(&truth, &cfg).unwrap(), simulate(&truth, &cfg).unwrap());
        let other = SimConfig { rng_seed: 43, ..cfg.clone() };
        assert_ne!(simulate(&truth, &cfg).unwrap(), simulate(&truth, &other).unwrap());
    }

    #[test]
    fn passive_band_stays_empty_with_noise() {
        // dwell around the cutoff so noisy values straddle it
        let truth = make_profile(
            &[
                ProfileSegment::new(30.0, 0.0, 1.5),
                ProfileSegment::new(60.0, 1.5, 1.5),
                ProfileSegment::new(30.0, 1.5, 8.0),
            ],
            10.0,
        )
        .unwrap();
        for seed in 0..20 {
            let cfg = SimConfig {
                noise: Some(VarianceCoefficients::PASSIVE_WSS),
                rng_seed: seed,
                ..SimConfig::default()
            };
            let out = simulate(&truth, &cfg).unwrap();
            assert!(out.samples.iter().all(|s| s.speed == 0.0 || s.speed >= 3.0));
            let active = simulate(&truth, &SimConfig { kind: SensorKind::ActiveWss, ..cfg }).unwrap();
            assert!(active.samples.iter().any(|s| s.speed == 1.0 || s.speed == 2.0));
        }
    }

    #[test]
    fn noiseless_within_half_unit_above_cutoff() {
        let truth = make_profile(&[ProfileSegment::new(100.0, 1.0, 40.0)], 10.0).unwrap();
        let out = simulate(&truth, &SimConfig::default()).unwrap();
        for (o, t) in out.samples.iter().zip(&truth.samples) {
            let kmh = t.speed * KMH_PER_MPS;
            if kmh >= 3.0 {
                assert!((o.speed - kmh).abs() <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn noise_variance_matches_model() {
        let model = VarianceCoefficients::PASSIVE_WSS;
        for kmh in [10.0, 40.0, 90.0] {
            let mut sensor = SensorSimulator::new(SimConfig {
                noise: Some(model),
                rng_seed: 7,
                ..SimConfig::default()
            })
            .unwrap();
            let n = 100_000;
            let errs: Vec<f64> = (0..n)
                .map(|_| sensor.read(kmh / KMH_PER_MPS, ReportUnit::KmPerHour).noisy_kmh - kmh)
                .collect();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = model.eval(kmh);
            assert!((var / expected - 1.0).abs() < 0.05, "{kmh}: {var} vs {expected}");
        }
    }

    #[test]
    fn vss_scale_applies_only_to_vss() {
        let model = VarianceCoefficients { a: 0.0, b: 0.0, c: 1.0, d: 0.0 };
        let mut vss = SensorSimulator::new(SimConfig {
            kind: SensorKind::TransmissionVss,
            noise: Some(model),
            vss_noise_scale: 0.0,
            ..SimConfig::default()
        })
        .unwrap();
        let r = vss.read(50.0 / KMH_PER_MPS, ReportUnit::KmPerHour);
        assert!((r.noisy_kmh - 50.0).abs() < 1e-12);
    }

    #[test]
    fn urban_profile_low_share() {
        let segs = urban_segments(600.0, 0.4, 7).unwrap();
        let total: f64 = segs.iter().map(|s| s.duration_s).sum();
        assert!((total - 600.0).abs() < 1e-6);
        let profile = make_profile(&segs, 10.0).unwrap();
        let low = profile.speeds_kmh().filter(|&v| v < URBAN_LOW_BAND_KMH).count() as f64;
        assert!((low / profile.len() as f64 - 0.4).abs() < 0.01);
    }

    #[test]
    fn parses_segments() {
        let s: ProfileSegment = "10:0:36".parse().unwrap();
        assert_eq!(s, ProfileSegment::new(10.0, 0.0, 10.0));
        assert!("10:0".parse::<ProfileSegment>().is_err());
        assert!("a:b:c".parse::<ProfileSegment>().is_err());
    }

    #[test]
    fn parses_sensor_kinds() {
        assert_eq!("passive".parse(), Ok(SensorKind::PassiveWss));
        assert_eq!("Active".parse(), Ok(SensorKind::ActiveWss));
        assert_eq!("vss".parse(), Ok(SensorKind::TransmissionVss));
        assert!("lidar".parse::<SensorKind>().is_err());
    }
}
