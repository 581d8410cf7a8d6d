//! ASCII codec for mode 01 / PID 0x0D (vehicle speed) exchanges.
//!
//! Requests are the four hex characters `010D`; responses are three
//! space-separated octets `41 0D XX`, where `XX` is the speed as one unsigned
//! byte in the reporting unit.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{KMH_PER_MPS, MPH_PER_MPS};

pub const MODE_CURRENT_DATA: u8 = 0x01;
pub const PID_VEHICLE_SPEED: u8 = 0x0D;
/// Positive responses echo the request mode with this bit set.
pub const RESPONSE_MODE_OFFSET: u8 = 0x40;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unexpected echo: mode 0x{mode:02X}, pid 0x{pid:02X} (expected 0x41 0x0D)")]
    WrongEcho { mode: u8, pid: u8 },
    #[error("non-finite speed input")]
    NonFiniteInput,
    #[error("speed {0} does not fit in one byte")]
    OutOfRange(i64),
}

/// Unit an ECU reports speed in. Most regions use km/h; US-market ECUs may be
/// configured for mph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReportUnit {
    #[default]
    KmPerHour,
    MilesPerHour,
}

impl ReportUnit {
    /// Multiplier from m/s into this unit.
    pub fn per_mps(self) -> f64 {
        match self {
            ReportUnit::KmPerHour => KMH_PER_MPS,
            ReportUnit::MilesPerHour => MPH_PER_MPS,
        }
    }

    pub fn from_region_flag(us_region: bool) -> Self {
        if us_region {
            ReportUnit::MilesPerHour
        } else {
            ReportUnit::KmPerHour
        }
    }
}

/// How a real-valued speed is reduced to the reported integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    /// Nearest integer, halves away from zero.
    #[default]
    NearestHalfAway,
    /// Drop the fractional part.
    Truncate,
}

impl RoundingMode {
    fn apply(self, x: f64) -> f64 {
        match self {
            RoundingMode::NearestHalfAway => x.round(),
            RoundingMode::Truncate => x.trunc(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObdRequest {
    pub mode: u8,
    pub pid: u8,
}

impl ObdRequest {
    pub const VEHICLE_SPEED: ObdRequest = ObdRequest {
        mode: MODE_CURRENT_DATA,
        pid: PID_VEHICLE_SPEED,
    };

    pub fn is_vehicle_speed(&self) -> bool {
        *self == Self::VEHICLE_SPEED
    }

    /// Parses a four-hex-digit request such as `010D` (any case, surrounding
    /// whitespace ignored).
    pub fn parse(raw: &[u8]) -> Result<Self, CodecError> {
        let text = std::str::from_utf8(raw)
            .map_err(|_| CodecError::MalformedFrame("request is not ASCII".into()))?
            .trim();
        if text.len() != 4 || !text.is_ascii() {
            return Err(CodecError::MalformedFrame(format!(
                "request `{text}` is not four hex digits"
            )));
        }
        let mode = parse_octet(&text[0..2])?;
        let pid = parse_octet(&text[2..4])?;
        Ok(Self { mode, pid })
    }

    pub fn encode(&self) -> Vec<u8> {
        format!("{:02X}{:02X}", self.mode, self.pid).into_bytes()
    }
}

/// Parsed `41 0D XX` frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObdSpeedResponse {
    pub mode_echo: u8,
    pub pid_echo: u8,
    pub speed_raw: u8,
    pub unit: ReportUnit,
}

impl ObdSpeedResponse {
    pub fn parse(raw: &[u8], unit: ReportUnit) -> Result<Self, CodecError> {
        let text = std::str::from_utf8(raw)
            .map_err(|_| CodecError::MalformedFrame("response is not ASCII".into()))?;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(CodecError::MalformedFrame(format!(
                "expected 3 octets, found {}",
                tokens.len()
            )));
        }
        let mut octets = [0u8; 3];
        for (slot, tok) in octets.iter_mut().zip(&tokens) {
            *slot = parse_octet(tok)?;
        }
        let [mode_echo, pid_echo, speed_raw] = octets;
        if mode_echo != MODE_CURRENT_DATA + RESPONSE_MODE_OFFSET || pid_echo != PID_VEHICLE_SPEED {
            return Err(CodecError::WrongEcho {
                mode: mode_echo,
                pid: pid_echo,
            });
        }
        Ok(Self {
            mode_echo,
            pid_echo,
            speed_raw,
            unit,
        })
    }
}

impl fmt::Display for ObdSpeedResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02X} {:02X} {:02X}",
            self.mode_echo, self.pid_echo, self.speed_raw
        )
    }
}

/// Integer speed as reported over OBD together with the estimate it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedSpeed {
    /// Reported integer in `unit`.
    pub value: i64,
    /// Speed estimate before quantization, m/s.
    pub source_estimate: f64,
    pub unit: ReportUnit,
}

fn parse_octet(tok: &str) -> Result<u8, CodecError> {
    if tok.len() != 2 || !tok.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(CodecError::MalformedFrame(format!(
            "`{tok}` is not a hex octet"
        )));
    }
    u8::from_str_radix(tok, 16).map_err(|e| CodecError::MalformedFrame(e.to_string()))
}

pub fn encode_speed_request() -> Vec<u8> {
    ObdRequest::VEHICLE_SPEED.encode()
}

pub fn decode_speed_request(raw: &[u8]) -> Result<ObdRequest, CodecError> {
    ObdRequest::parse(raw)
}

/// Decodes `41 0D XX` into the reported speed.
pub fn decode_speed_response(raw: &[u8], unit: ReportUnit) -> Result<u8, CodecError> {
    ObdSpeedResponse::parse(raw, unit).map(|r| r.speed_raw)
}

pub fn quantize_speed(v_mps: f64, unit: ReportUnit) -> Result<QuantizedSpeed, CodecError> {
    quantize_speed_with(v_mps, unit, RoundingMode::default())
}

/// Converts an m/s estimate into the reporting unit, rounds it and clamps it
/// to the one-byte range. Negative estimates report as zero.
pub fn quantize_speed_with(
    v_mps: f64,
    unit: ReportUnit,
    rounding: RoundingMode,
) -> Result<QuantizedSpeed, CodecError> {
    if !v_mps.is_finite() {
        return Err(CodecError::NonFiniteInput);
    }
    let converted = v_mps * unit.per_mps();
    let value = rounding.apply(converted).clamp(0.0, u8::MAX as f64) as i64;
    Ok(QuantizedSpeed {
        value,
        source_estimate: v_mps,
        unit,
    })
}

pub fn encode_speed_response(q: &QuantizedSpeed) -> Result<Vec<u8>, CodecError> {
    let raw = u8::try_from(q.value).map_err(|_| CodecError::OutOfRange(q.value))?;
    Ok(encode_speed_byte(raw))
}

pub fn encode_speed_byte(speed_raw: u8) -> Vec<u8> {
    let frame = ObdSpeedResponse {
        mode_echo: MODE_CURRENT_DATA + RESPONSE_MODE_OFFSET,
        pid_echo: PID_VEHICLE_SPEED,
        speed_raw,
        unit: ReportUnit::KmPerHour,
    };
    frame.to_string().into_bytes()
}
