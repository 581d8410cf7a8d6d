use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use obdspeed_core::analysis::report::{
    build_report, pmf_csv, rmse_csv, to_stable_json, variance_csv, FitOutcome, ReportError,
    ReportOptions,
};
use obdspeed_core::analysis::{
    bin_errors, classify_sensor, fit_variance_model, fit_variance_points, pmf, rmse_by_interval,
    Weighting,
};
use obdspeed_core::ecu::{poll, EcuServer, EcuState, PollConfig, TrajectoryPlayer};
use obdspeed_core::ingest::{align, read_csv, write_csv};
use obdspeed_core::sim::{make_profile, simulate, urban_segments, ProfileSegment};
use obdspeed_core::{
    AnalysisError, BinOptions, FitOptions, IngestError, ReportUnit, SensorKind, SimConfig,
    SpeedSeries, SpeedUnit, VarianceCoefficients, VarianceModel,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Fit(String),
}

impl CliError {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const FIT: u8 = 3;

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => Self::USAGE,
            CliError::Data(_) => Self::DATA,
            CliError::Fit(_) => Self::FIT,
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::FitDiverged => CliError::Fit(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Analysis(a) => a.into(),
            ReportError::Ingest(i) => i.into(),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(IngestError, obdspeed_core::SimError, obdspeed_core::ecu::EcuError, serde_json::Error);

type Result<T> = std::result::Result<T, CliError>;

/// Simulate, serve, poll and analyse OBD-II vehicle speed (mode 01, PID 0x0D).
///
/// Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 variance fit
/// diverged.
#[derive(Debug, Parser)]
#[command(name = "obdspeed", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a ground-truth speed profile into integer OBD readings.
    Simulate(SimulateArgs),
    /// Run a virtual ECU answering `010D` over TCP.
    Serve(ServeArgs),
    /// Poll an ECU endpoint for vehicle speed and log the readings.
    Poll(PollArgs),
    /// Classify the wheel speed sensor as passive or active.
    Identify(IdentifyArgs),
    /// Fit the speed-dependent error variance model.
    FitVariance(FitArgs),
    /// Speed-interval probability mass function of a log.
    Pmf(PmfArgs),
    /// RMSE per speed interval of one or more sources against a reference.
    Rmse(RmseArgs),
    /// Full analysis: align, classify, bin, fit, PMF and RMSE.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SensorArgs {
    /// Sensor type: passive, active or vss.
    #[arg(long, default_value = "passive")]
    sensor: SensorKind,
    /// Noise variance model: `none`, `passive-wss` (built-in road fit) or a
    /// JSON file with `a`, `b`, `c`, `d`.
    #[arg(long, default_value = "none")]
    noise: String,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Passive WSS and VSS cutoff, km/h.
    #[arg(long, default_value_t = 3.0)]
    cutoff: f64,
    /// Active WSS resolution floor, km/h.
    #[arg(long, default_value_t = 0.1)]
    active_floor: f64,
    /// Variance multiplier applied to the VSS sensor.
    #[arg(long, default_value_t = 1.0)]
    vss_noise_scale: f64,
}

impl SensorArgs {
    fn config(&self, rate_hz: f64) -> Result<SimConfig> {
        Ok(SimConfig {
            kind: self.sensor,
            passive_cutoff_kmh: self.cutoff,
            active_floor_kmh: self.active_floor,
            noise: load_noise(&self.noise)?,
            vss_noise_scale: self.vss_noise_scale,
            sample_rate_hz: rate_hz,
            rng_seed: self.seed,
        })
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("truth").required(true).args(["profile", "segments", "urban"])))]
pub struct SimulateArgs {
    /// Ground-truth speed CSV (timestamp_s,speed,unit,source).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Piecewise-linear profile, `duration_s:start_kmh:end_kmh` per leg.
    #[arg(long, value_delimiter = ',')]
    segments: Vec<ProfileSegment>,
    /// Generate a stop-and-go profile of this many seconds.
    #[arg(long)]
    urban: Option<f64>,
    /// Share of the urban profile spent below 4 km/h.
    #[arg(long, default_value_t = 0.4)]
    low_fraction: f64,
    /// OBD sample rate, Hz.
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    #[command(flatten)]
    sensor: SensorArgs,
    /// Output CSV of OBD readings (km/h).
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground truth (km/h) here.
    #[arg(long)]
    ref_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:35000")]
    listen: String,
    /// Speed profile to replay in real time.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Constant true speed when no profile is given, km/h.
    #[arg(long, default_value_t = 0.0)]
    speed_kmh: f64,
    /// Restart the profile when it ends instead of holding the last speed.
    #[arg(long = "loop")]
    looped: bool,
    /// Report in mph (US region) instead of km/h.
    #[arg(long)]
    mph: bool,
    /// Stop after this many seconds; runs until killed when absent.
    #[arg(long)]
    duration: Option<f64>,
    #[command(flatten)]
    sensor: SensorArgs,
}

#[derive(Debug, Args)]
pub struct PollArgs {
    /// ECU endpoint, host:port.
    #[arg(long)]
    connect: String,
    /// Request rate, Hz.
    #[arg(long, default_value_t = 10.0)]
    hz: f64,
    /// Polling duration, seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Per-request timeout, milliseconds.
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    /// The ECU reports mph.
    #[arg(long)]
    mph: bool,
    /// Output CSV of readings (km/h, UNIX timestamps).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// OBD speed log CSV.
    #[arg(long)]
    obd: PathBuf,
    /// Reference speed log CSV.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Reference gaps wider than this (s) are not interpolated across.
    #[arg(long, default_value_t = obdspeed_core::ingest::DEFAULT_MAX_GAP_S)]
    max_gap: f64,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    logs: AlignArgs,
    /// Passive sensor cutoff, km/h.
    #[arg(long, default_value_t = 3.0)]
    cutoff: f64,
    /// Reference samples below the cutoff needed for a passive verdict.
    #[arg(long, default_value_t = obdspeed_core::analysis::DEFAULT_MIN_LOW_SPEED_REF_SAMPLES)]
    min_low_samples: usize,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightingArg {
    InverseVariance,
    Unweighted,
    Count,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::InverseVariance => Weighting::InverseVariance,
            WeightingArg::Unweighted => Weighting::Unweighted,
            WeightingArg::Count => Weighting::ByCount,
        }
    }
}

#[derive(Debug, Args)]
pub struct BinArgs {
    /// Speed bin width, km/h.
    #[arg(long, default_value_t = obdspeed_core::analysis::DEFAULT_INTERVAL_KMH)]
    bin_width: f64,
    /// Samples a bin needs to enter the fit.
    #[arg(long, default_value_t = 30)]
    min_count: usize,
    /// OBD quantization step, km/h; `h^2/12` is removed from each bin
    /// variance. Use 0 for unquantized readings.
    #[arg(long, default_value_t = 1.0)]
    quant_step: f64,
}

impl BinArgs {
    fn options(&self) -> BinOptions {
        BinOptions {
            bin_width_kmh: self.bin_width,
            min_count: self.min_count,
            quantization_step_kmh: self.quant_step,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgsCommon {
    /// Bin weighting for the least-squares fit.
    #[arg(long, value_enum, default_value = "inverse-variance")]
    weighting: WeightingArg,
    /// Minimum usable bins.
    #[arg(long, default_value_t = 6)]
    min_bins: usize,
    /// Iteration cap per start.
    #[arg(long, default_value_t = 2000)]
    max_iterations: usize,
}

impl FitArgsCommon {
    fn options(&self) -> FitOptions {
        FitOptions {
            weighting: self.weighting.into(),
            min_bins: self.min_bins,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["bins", "obd"])))]
pub struct FitArgs {
    /// Pre-binned variances: CSV with `speed_kmh,variance[,count]`.
    #[arg(long)]
    bins: Option<PathBuf>,
    /// OBD speed log CSV (with --ref).
    #[arg(long, requires = "reference")]
    obd: Option<PathBuf>,
    /// Reference speed log CSV.
    #[arg(long = "ref", requires = "obd")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = obdspeed_core::ingest::DEFAULT_MAX_GAP_S)]
    max_gap: f64,
    #[command(flatten)]
    binning: BinArgs,
    #[command(flatten)]
    fit: FitArgsCommon,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PmfArgs {
    /// Speed log CSV.
    #[arg(long)]
    series: PathBuf,
    /// Interval width, km/h.
    #[arg(long, default_value_t = obdspeed_core::analysis::DEFAULT_INTERVAL_KMH)]
    interval: f64,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot-ready CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RmseArgs {
    /// Reference speed log CSV.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Speed source to compare; repeat for several.
    #[arg(long = "source", required = true)]
    sources: Vec<PathBuf>,
    /// Interval width, km/h.
    #[arg(long, default_value_t = obdspeed_core::analysis::DEFAULT_INTERVAL_KMH)]
    interval: f64,
    #[arg(long, default_value_t = obdspeed_core::ingest::DEFAULT_MAX_GAP_S)]
    max_gap: f64,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot-ready CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    logs: AlignArgs,
    /// Passive sensor cutoff, km/h.
    #[arg(long, default_value_t = 3.0)]
    cutoff: f64,
    /// Reference samples below the cutoff needed for a passive verdict.
    #[arg(long, default_value_t = obdspeed_core::analysis::DEFAULT_MIN_LOW_SPEED_REF_SAMPLES)]
    min_low_samples: usize,
    #[command(flatten)]
    binning: BinArgs,
    #[command(flatten)]
    fit: FitArgsCommon,
    /// PMF and RMSE interval width, km/h.
    #[arg(long, default_value_t = obdspeed_core::analysis::DEFAULT_INTERVAL_KMH)]
    interval: f64,
    /// JSON report output.
    #[arg(long)]
    out: PathBuf,
    /// Directory for plot-ready CSVs (variance.csv, pmf.csv, rmse.csv).
    #[arg(long)]
    plots: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Serve(a) => run_serve(a),
        Command::Poll(a) => run_poll(a),
        Command::Identify(a) => run_identify(a),
        Command::FitVariance(a) => run_fit(a),
        Command::Pmf(a) => run_pmf(a),
        Command::Rmse(a) => run_rmse(a),
        Command::Report(a) => run_report(a),
    }
}

fn load_noise(choice: &str) -> Result<Option<VarianceCoefficients>> {
    match choice {
        "none" => Ok(None),
        "passive-wss" => Ok(Some(VarianceCoefficients::PASSIVE_WSS)),
        path => {
            let text = read_text(Path::new(path))?;
            let model: VarianceCoefficients = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            Ok(Some(model))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_stable_json(value)?)
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let truth = if let Some(path) = &a.profile {
        read_csv(path)?
    } else if let Some(duration) = a.urban {
        make_profile(&urban_segments(duration, a.low_fraction, a.sensor.seed)?, a.rate)?
    } else {
        make_profile(&a.segments, a.rate)?
    };
    let cfg = a.sensor.config(a.rate)?;
    let obd = simulate(&truth, &cfg)?;
    write_csv(&obd, &a.out)?;
    if let Some(path) = &a.ref_out {
        let mut reference = truth.to_unit(SpeedUnit::Kmh);
        reference.source = "reference".into();
        write_csv(&reference, path)?;
    }
    let cutoff = cfg.passive_cutoff_kmh;
    let zero = obd.samples.iter().filter(|s| s.speed == 0.0).count();
    let low = obd.samples.iter().filter(|s| s.speed > 0.0 && s.speed < cutoff).count();
    println!(
        "simulated {} readings ({:?}, seed {}): {} zero, {} in (0, {} km/h)",
        obd.len(),
        cfg.kind,
        cfg.rng_seed,
        zero,
        low,
        cutoff
    );
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<()> {
    let unit = ReportUnit::from_region_flag(a.mph);
    let state = Arc::new(EcuState::new(a.sensor.config(10.0)?, unit)?);
    state.set_speed_mps(a.speed_kmh / obdspeed_core::KMH_PER_MPS);
    let server = EcuServer::bind(a.listen.as_str(), Arc::clone(&state))?;
    let handle = server.spawn()?;
    let _player = match &a.profile {
        Some(path) => Some(TrajectoryPlayer::start(Arc::clone(&state), &read_csv(path)?, a.looped)),
        None => None,
    };
    println!("listening on {}", handle.addr());
    match a.duration {
        Some(s) if s.is_finite() && s >= 0.0 => {
            thread::sleep(Duration::from_secs_f64(s));
            handle.shutdown()?;
        }
        Some(s) => return Err(CliError::Usage(format!("--duration must be >= 0, got {s}"))),
        None => loop {
            thread::park();
        },
    }
    Ok(())
}

fn run_poll(a: PollArgs) -> Result<()> {
    let mut cfg = PollConfig::new(a.connect, a.hz, a.duration)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.timeout = Duration::from_millis(a.timeout_ms);
    cfg.unit = ReportUnit::from_region_flag(a.mph);
    let out = poll(&cfg)?;
    write_csv(&out.series, &a.out)?;
    println!(
        "sent {}, received {}, timeouts {}, malformed {}, no data {}",
        out.sent,
        out.series.len(),
        out.timeouts,
        out.malformed,
        out.no_data
    );
    Ok(())
}

fn load_pair(a: &AlignArgs) -> Result<(SpeedSeries, SpeedSeries)> {
    Ok((read_csv(&a.obd)?, read_csv(&a.reference)?))
}

fn run_identify(a: IdentifyArgs) -> Result<()> {
    let (obd, reference) = load_pair(&a.logs)?;
    let aligned = align(&obd, &reference, a.logs.max_gap)?;
    let v = classify_sensor(&aligned.pairs, a.cutoff, a.min_low_samples)?;
    println!("{}", v.verdict);
    println!(
        "readings in (0, {} km/h): {}; reference samples in that band: {}",
        v.cutoff_kmh, v.low_band_obd_readings, v.low_speed_ref_samples
    );
    if let Some(path) = &a.out {
        write_json(path, &v)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct BinRow {
    speed_kmh: f64,
    variance: f64,
    count: Option<f64>,
}

/// Speeds, variances and (when every row has one) counts.
type BinColumns = (Vec<f64>, Vec<f64>, Option<Vec<f64>>);

fn read_bins(path: &Path) -> Result<BinColumns> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let (mut v, mut y, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for row in rdr.deserialize::<BinRow>() {
        let row = row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        v.push(row.speed_kmh);
        y.push(row.variance);
        n.push(row.count);
    }
    let counts = n.iter().copied().collect::<Option<Vec<f64>>>();
    Ok((v, y, counts))
}

fn print_model(m: &VarianceModel) {
    let c = &m.coefficients;
    let h = &m.ci_halfwidth;
    println!("sigma^2(v) = a*exp(b*v) + c*exp(d*v)   (v in km/h, {} bins)", m.bins_used);
    for (name, x, ci) in [("a", c.a, h.a), ("b", c.b, h.b), ("c", c.c, h.c), ("d", c.d, h.d)] {
        println!("  {name} = {x:.6e}  +/- {ci:.3e}");
    }
    println!("  rmse = {:.4e}", m.fit_rmse);
}

fn run_fit(a: FitArgs) -> Result<()> {
    let opts = a.fit.options();
    let model = if let Some(path) = &a.bins {
        let (v, y, counts) = read_bins(path)?;
        fit_variance_points(&v, &y, counts.as_deref(), &opts)?
    } else {
        let (Some(obd), Some(reference)) = (&a.obd, &a.reference) else {
            return Err(CliError::Usage("need --bins or both --obd and --ref".into()));
        };
        let aligned = align(&read_csv(obd)?, &read_csv(reference)?, a.max_gap)?;
        let bins = bin_errors(&aligned.pairs, &a.binning.options())?;
        fit_variance_model(&bins, &opts)?
    };
    print_model(&model);
    if let Some(path) = &a.out {
        write_json(path, &model)?;
    }
    Ok(())
}

fn run_pmf(a: PmfArgs) -> Result<()> {
    let table = pmf(&read_csv(&a.series)?, a.interval)?;
    println!("{} samples", table.samples);
    for b in &table.bins {
        println!("  [{:>5}, {:>5}) km/h  {:.4}", b.v_lo_kmh, b.v_hi_kmh, b.mass);
    }
    if let Some(path) = &a.out {
        write_json(path, &table)?;
    }
    if let Some(path) = &a.csv {
        write_text(path, &pmf_csv(&table))?;
    }
    Ok(())
}

fn source_label(series: &SpeedSeries, path: &Path, taken: &BTreeMap<String, Vec<obdspeed_core::AlignedPair>>) -> String {
    let stem = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    if series.source.is_empty() || taken.contains_key(&series.source) {
        stem
    } else {
        series.source.clone()
    }
}

fn run_rmse(a: RmseArgs) -> Result<()> {
    let reference = read_csv(&a.reference)?;
    let mut per_source = BTreeMap::new();
    for path in &a.sources {
        let series = read_csv(path)?;
        let label = source_label(&series, path, &per_source);
        let aligned = align(&series, &reference, a.max_gap)?;
        per_source.insert(label, aligned.pairs);
    }
    let tables = rmse_by_interval(&per_source, a.interval)?;
    for (source, t) in &tables {
        println!("{source}");
        for b in t.bins.iter().filter(|b| b.count > 0) {
            println!("  [{:>5}, {:>5}) km/h  n={:<6} rmse {:.4}", b.v_lo_kmh, b.v_hi_kmh, b.count, b.rmse_kmh);
        }
    }
    if let Some(path) = &a.out {
        write_json(path, &tables)?;
    }
    if let Some(path) = &a.csv {
        write_text(path, &rmse_csv(&tables))?;
    }
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let (obd, reference) = load_pair(&a.logs)?;
    let opts = ReportOptions {
        max_gap_s: a.logs.max_gap,
        cutoff_kmh: a.cutoff,
        min_low_speed_ref_samples: a.min_low_samples,
        bins: a.binning.options(),
        fit: a.fit.options(),
        pmf_interval_kmh: a.interval,
        rmse_interval_kmh: a.interval,
    };
    let report = build_report(&obd, &reference, &opts)?;
    write_json(&a.out, &report)?;

    let s = &report.alignment;
    println!("aligned {} of {} OBD samples", s.aligned, s.obd_samples);
    println!("sensor: {}", report.sensor.verdict);
    let model = match &report.variance_model {
        FitOutcome::Fitted(m) => {
            print_model(m);
            Some(m)
        }
        FitOutcome::Failed(reason) => {
            println!("variance fit failed: {reason}");
            None
        }
    };
    if let Some(dir) = &a.plots {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        write_text(&dir.join("variance.csv"), &variance_csv(&report.error_bins, model))?;
        write_text(&dir.join("pmf.csv"), &pmf_csv(&report.pmf))?;
        write_text(&dir.join("rmse.csv"), &rmse_csv(&report.rmse))?;
    }
    Ok(())
}
