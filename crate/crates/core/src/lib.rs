//! Vehicle speed over OBD-II: wire codec, speed-source models, sensor
//! simulation, a request-response virtual ECU, log ingestion and the
//! speed-error analysis pipeline.
//!
//! Internal speeds are m/s. km/h only appears at the OBD reporting boundary
//! and in the analysis tables.

pub mod analysis;
pub mod codec;
pub mod drivetrain;
pub mod ecu;
pub mod ingest;
pub mod series;
pub mod sim;

pub use analysis::{
    AnalysisError, BinOptions, BinStat, BinnedStats, FitOptions, PmfTable, SensorVerdict,
    VarianceCoefficients, VarianceModel, Verdict,
};
pub use codec::{CodecError, ObdRequest, ObdSpeedResponse, QuantizedSpeed, ReportUnit, RoundingMode};
pub use drivetrain::{DrivetrainConfig, ModelError, PulseWindow, WheelSpeeds};
pub use ingest::{AlignedPair, AlignmentSummary, IngestError};
pub use series::{SpeedSample, SpeedSeries, SpeedUnit};
pub use sim::{SensorKind, SensorSimulator, SimConfig, SimError};

/// km/h per m/s.
pub const KMH_PER_MPS: f64 = 3.6;
/// mph per m/s (3600 / 1609.344).
pub const MPH_PER_MPS: f64 = 2.236936;
