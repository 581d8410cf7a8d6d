//! The two OEM speed-derivation paths: transmission (engine RPM through the
//! gear train) and ABS wheel speed sensors (reluctor pulses per window,
//! averaged over four wheels). All results are m/s, before quantization.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid drivetrain config: {0}")]
    InvalidConfig(String),
    #[error("invalid pulse window: {0}")]
    InvalidWindow(String),
    #[error("non-finite or negative input: {0}")]
    NonFiniteInput(String),
    #[error("expected 4 wheel speeds, got {0}")]
    WrongWheelCount(usize),
}

/// Default plausible band for a road-vehicle wheel radius, metres.
pub const WHEEL_RADIUS_BAND_M: (f64, f64) = (0.1, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivetrainConfig {
    pub wheel_radius_m: f64,
    /// Ratio of the engaged gear.
    pub gear_ratio: f64,
    /// Differential ratio.
    pub final_drive_ratio: f64,
    pub reluctor_teeth: u32,
}

impl DrivetrainConfig {
    pub fn new(
        wheel_radius_m: f64,
        gear_ratio: f64,
        final_drive_ratio: f64,
        reluctor_teeth: u32,
    ) -> Result<Self, ModelError> {
        let cfg = Self {
            wheel_radius_m,
            gear_ratio,
            final_drive_ratio,
            reluctor_teeth,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_with_band(WHEEL_RADIUS_BAND_M)
    }

    pub fn validate_with_band(&self, (r_min, r_max): (f64, f64)) -> Result<(), ModelError> {
        let r = self.wheel_radius_m;
        if !(r.is_finite() && r > r_min && r < r_max) {
            return Err(ModelError::InvalidConfig(format!(
                "wheel radius {r} m outside ({r_min}, {r_max})"
            )));
        }
        for (name, v) in [
            ("gear ratio", self.gear_ratio),
            ("final drive ratio", self.final_drive_ratio),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.reluctor_teeth == 0 {
            return Err(ModelError::InvalidConfig("reluctor ring needs at least one tooth".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseWindow {
    pub pulse_count: u64,
    pub window_s: f64,
}

impl PulseWindow {
    pub fn new(pulse_count: u64, window_s: f64) -> Result<Self, ModelError> {
        if !(window_s.is_finite() && window_s > 0.0) {
            return Err(ModelError::InvalidWindow(format!("window must be > 0 s, got {window_s}")));
        }
        Ok(Self {
            pulse_count,
            window_s,
        })
    }
}

/// Linear speeds of the four wheels, m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSpeeds(pub [f64; 4]);

impl WheelSpeeds {
    pub fn new(speeds: [f64; 4]) -> Result<Self, ModelError> {
        for (i, v) in speeds.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(ModelError::NonFiniteInput(format!("wheel {} speed {v}", i + 1)));
            }
        }
        Ok(Self(speeds))
    }

    /// Partial sensor sets are rejected rather than averaged.
    pub fn from_slice(speeds: &[f64]) -> Result<Self, ModelError> {
        let arr: [f64; 4] = speeds
            .try_into()
            .map_err(|_| ModelError::WrongWheelCount(speeds.len()))?;
        Self::new(arr)
    }
}

/// Vehicle speed from engine RPM, assuming no slip between engine and wheels:
/// `N_e * pi * r_w / (30 * i_x * i_0)`.
pub fn transmission_speed(engine_rpm: f64, cfg: &DrivetrainConfig) -> Result<f64, ModelError> {
    cfg.validate()?;
    if !(engine_rpm.is_finite() && engine_rpm >= 0.0) {
        return Err(ModelError::NonFiniteInput(format!("engine rpm {engine_rpm}")));
    }
    Ok(engine_rpm * PI * cfg.wheel_radius_m / (30.0 * cfg.gear_ratio * cfg.final_drive_ratio))
}

/// Linear speed of one wheel from reluctor pulses counted over a window:
/// `2 * pi * r_w * N_p / (N_t * dt)`.
pub fn wheel_speed(pw: &PulseWindow, cfg: &DrivetrainConfig) -> Result<f64, ModelError> {
    if !(pw.window_s.is_finite() && pw.window_s > 0.0) {
        return Err(ModelError::InvalidWindow(format!("window must be > 0 s, got {}", pw.window_s)));
    }
    cfg.validate()?;
    Ok(2.0 * PI * cfg.wheel_radius_m * pw.pulse_count as f64
        / (cfg.reluctor_teeth as f64 * pw.window_s))
}

/// Mean of the four wheel speeds. Quantization to the OBD integer happens
/// afterwards, on the mean.
pub fn vehicle_speed_from_wheels(ws: &WheelSpeeds) -> Result<f64, ModelError> {
    let checked = WheelSpeeds::new(ws.0)?;
    Ok(checked.0.iter().sum::<f64>() / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(r: f64, ix: f64, i0: f64, nt: u32) -> DrivetrainConfig {
        DrivetrainConfig::new(r, ix, i0, nt).unwrap()
    }

    #[test]
    fn transmission_examples() {
        let c = cfg(0.3, 1.0, 3.0, 48);
        // 3000 rpm / 3 = 1000 wheel rpm = 16.667 rev/s; 2*pi*0.3*16.667 = 10*pi.
        assert_relative_eq!(transmission_speed(3000.0, &c).unwrap(), 10.0 * PI, max_relative = 1e-12);
        assert_eq!(transmission_speed(0.0, &c).unwrap(), 0.0);
        let doubled = cfg(0.3, 1.0, 6.0, 48);
        assert_relative_eq!(
            transmission_speed(3000.0, &doubled).unwrap(),
            5.0 * PI,
            max_relative = 1e-12
        );
    }

    #[test]
    fn invalid_configs() {
        assert!(DrivetrainConfig::new(0.0, 1.0, 3.0, 48).is_err());
        assert!(DrivetrainConfig::new(1.5, 1.0, 3.0, 48).is_err());
        assert!(DrivetrainConfig::new(0.3, -1.0, 3.0, 48).is_err());
        assert!(DrivetrainConfig::new(0.3, 1.0, 0.0, 48).is_err());
        assert!(DrivetrainConfig::new(0.3, 1.0, 3.0, 0).is_err());
        let bad = DrivetrainConfig {
            wheel_radius_m: 0.3,
            gear_ratio: 0.0,
            final_drive_ratio: 3.0,
            reluctor_teeth: 48,
        };
        assert!(matches!(transmission_speed(1000.0, &bad), Err(ModelError::InvalidConfig(_))));
        // a wider band admits a 1.5 m radius
        let big = DrivetrainConfig { wheel_radius_m: 1.5, ..bad };
        assert!(DrivetrainConfig { gear_ratio: 1.0, ..big }
            .validate_with_band((0.1, 2.0))
            .is_ok());
    }

    #[test]
    fn wheel_speed_examples() {
        let c = cfg(0.3, 1.0, 3.0, 48);
        let one_rev = PulseWindow::new(48, 1.0).unwrap();
        assert_relative_eq!(wheel_speed(&one_rev, &c).unwrap(), 2.0 * PI * 0.3, max_relative = 1e-12);
        assert_eq!(wheel_speed(&PulseWindow::new(0, 1.0).unwrap(), &c).unwrap(), 0.0);
        assert!(PulseWindow::new(10, 0.0).is_err());
        let raw = PulseWindow { pulse_count: 10, window_s: -1.0 };
        assert!(matches!(wheel_speed(&raw, &c), Err(ModelError::InvalidWindow(_))));
    }

    #[test]
    fn wheel_average_examples() {
        let ws = WheelSpeeds::new([10.0, 10.0, 10.0, 14.0]).unwrap();
        assert_eq!(vehicle_speed_from_wheels(&ws).unwrap(), 11.0);
        assert_eq!(vehicle_speed_from_wheels(&WheelSpeeds([0.0; 4])).unwrap(), 0.0);
        assert_eq!(vehicle_speed_from_wheels(&WheelSpeeds([7.5; 4])).unwrap(), 7.5);
        assert!(WheelSpeeds::new([1.0, f64::NAN, 1.0, 1.0]).is_err());
        assert!(matches!(
            vehicle_speed_from_wheels(&WheelSpeeds([1.0, 1.0, -1.0, 1.0])),
            Err(ModelError::NonFiniteInput(_))
        ));
        assert_eq!(
            WheelSpeeds::from_slice(&[1.0, 2.0, 3.0]),
            Err(ModelError::WrongWheelCount(3))
        );
    }

    proptest! {
        #[test]
        fn transmission_linear_in_rpm(rpm in 0.0f64..8000.0, alpha in 0.0f64..4.0,
                                      r in 0.2f64..0.5, ix in 0.5f64..5.0, i0 in 2.0f64..5.0) {
            let c = cfg(r, ix, i0, 48);
            let lhs = transmission_speed(alpha * rpm, &c).unwrap();
            let rhs = alpha * transmission_speed(rpm, &c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }

        #[test]
        fn wheel_speed_scaling(np in 0u64..10_000, dt in 0.01f64..2.0, k in 1u64..5) {
            let c = cfg(0.31, 1.0, 3.0, 48);
            let base = wheel_speed(&PulseWindow::new(np, dt).unwrap(), &c).unwrap();
            let more = wheel_speed(&PulseWindow::new(np * k, dt).unwrap(), &c).unwrap();
            let longer = wheel_speed(&PulseWindow::new(np, dt * k as f64).unwrap(), &c).unwrap();
            prop_assert!((more - base * k as f64).abs() <= 1e-9 * more.max(1.0));
            prop_assert!((longer * k as f64 - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn mean_within_wheel_range(v in proptest::array::uniform4(0.0f64..80.0)) {
            let m = vehicle_speed_from_wheels(&WheelSpeeds(v)).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }

        // A wheel turning at omega rad/s emits omega*N_t/(2*pi) pulses per second;
        // counting them over dt recovers omega*r_w to within one pulse quantum.
        #[test]
        fn pulse_count_converges_to_rim_speed(omega in 0.0f64..200.0, dt in 0.05f64..20.0,
                                               nt in 20u32..100, r in 0.2f64..0.45) {
            let c = cfg(r, 1.0, 3.0, nt);
            let pulses = (omega * nt as f64 / (2.0 * PI) * dt).floor() as u64;
            let est = wheel_speed(&PulseWindow::new(pulses, dt).unwrap(), &c).unwrap();
            let quantum = 2.0 * PI * r / (nt as f64 * dt);
            prop_assert!((est - omega * r).abs() <= quantum + 1e-9);
        }
    }
}
