//! A virtual ECU answering OBD-II speed requests over a line-oriented TCP
//! protocol, and the polling client that logs its answers.
//!
//! Framing follows ELM327-style interpreters: the client sends `010D\r`, the
//! ECU answers `41 0D XX\r>`; anything else gets `NO DATA\r>`. Each
//! connection is served by its own thread, strictly in request order.

use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::codec::{decode_speed_request, encode_speed_request, encode_speed_response, CodecError, ReportUnit};
use crate::series::{SpeedSeries, SpeedUnit};
use crate::sim::{SensorSimulator, SimConfig, SimError};
use crate::KMH_PER_MPS;

pub const PROMPT: u8 = b'>';
pub const NO_DATA: &str = "NO DATA";
const ACCEPT_IDLE: Duration = Duration::from_millis(5);
const READ_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum EcuError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot connect to {addr}: {source}")]
    ConnectFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("request timed out")]
    Timeout,
    #[error("ECU answered NO DATA")]
    NoData,
    #[error("connection closed by ECU")]
    Closed,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid poll config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Live state behind the ECU: the current true speed and the sensor model
/// that turns it into a reading.
#[derive(Debug)]
pub struct EcuState {
    // f64 bits, so readers never see a torn value
    speed_bits: AtomicU64,
    sensor: Mutex<SensorSimulator>,
    unit: ReportUnit,
}

impl EcuState {
    pub fn new(cfg: SimConfig, unit: ReportUnit) -> Result<Self, EcuError> {
        Ok(Self {
            speed_bits: AtomicU64::new(0f64.to_bits()),
            sensor: Mutex::new(SensorSimulator::new(cfg)?),
            unit,
        })
    }

    pub fn unit(&self) -> ReportUnit {
        self.unit
    }

    /// Non-finite or negative speeds are stored as zero.
    pub fn set_speed_mps(&self, v: f64) {
        let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
        self.speed_bits.store(v.to_bits(), Ordering::Release);
    }

    pub fn speed_mps(&self) -> f64 {
        f64::from_bits(self.speed_bits.load(Ordering::Acquire))
    }

    /// Answer for one request line, prompt included. Blank lines get no
    /// answer.
    pub fn respond(&self, line: &[u8]) -> Option<Vec<u8>> {
        let trimmed = line.trim_ascii();
        if trimmed.is_empty() {
            return None;
        }
        let mut out = match decode_speed_request(trimmed) {
            Ok(req) if req.is_vehicle_speed() => {
                let reading = self
                    .sensor
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .read(self.speed_mps(), self.unit);
                encode_speed_response(&reading.quantized).expect("quantized speed fits a byte")
            }
            _ => NO_DATA.as_bytes().to_vec(),
        };
        out.push(b'\r');
        out.push(PROMPT);
        Some(out)
    }
}

pub struct EcuServer {
    listener: TcpListener,
    state: Arc<EcuState>,
}

impl EcuServer {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, state: Arc<EcuState>) -> Result<Self, EcuError> {
        let label = format!("{addr:?}");
        let listener = TcpListener::bind(addr).map_err(|source| EcuError::BindFailure {
            addr: label.clone(),
            source,
        })?;
        listener
            .set_nonblocking(true)
            .map_err(|source| EcuError::BindFailure { addr: label, source })?;
        Ok(Self { listener, state })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves connections until `shutdown` is set.
    pub fn run(self, shutdown: Arc<AtomicBool>) -> Result<(), EcuError> {
        let mut workers = Vec::new();
        while !shutdown.load(Ordering::Acquire) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    log::debug!("client {peer} connected");
                    let state = Arc::clone(&self.state);
                    let shutdown = Arc::clone(&shutdown);
                    workers.push(thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, &state, &shutdown) {
                            log::info!("client {peer}: {e}");
                        }
                        log::debug!("client {peer} disconnected");
                    }));
                    workers.retain(|w: &JoinHandle<()>| !w.is_finished());
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(ACCEPT_IDLE),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, EcuError> {
        let addr = self.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let thread = thread::spawn(move || self.run(flag));
        Ok(ServerHandle {
            addr,
            shutdown,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), EcuError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<(), EcuError> {
        self.stop()
    }

    fn stop(&mut self) -> Result<(), EcuError> {
        self.shutdown.store(true, Ordering::Release);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

fn serve_connection(stream: TcpStream, state: &EcuState, shutdown: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(READ_POLL))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = stream;
    let mut line = Vec::with_capacity(32);
    let mut buf = [0u8; 512];
    loop {
        if shutdown.load(Ordering::Acquire) {
            return Ok(());
        }
        let n = match reader.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        for &b in &buf[..n] {
            if b == b'\r' || b == b'\n' {
                if let Some(resp) = state.respond(&line) {
                    writer.write_all(&resp)?;
                }
                line.clear();
            } else if line.len() < 256 {
                line.push(b);
            }
        }
    }
}

/// Replays a speed profile into an [`EcuState`] in real time.
pub struct TrajectoryPlayer {
    started_unix_s: f64,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TrajectoryPlayer {
    /// Starts playback; after the profile ends the last speed is held, or the
    /// profile restarts when `looped`.
    pub fn start(state: Arc<EcuState>, profile: &SpeedSeries, looped: bool) -> Self {
        let profile = profile.to_unit(SpeedUnit::Mps);
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let t0 = profile.start().unwrap_or(0.0);
        let duration = profile.duration_s();
        let last = profile.samples.last().map_or(0.0, |s| s.speed);
        if let Some(first) = profile.samples.first() {
            state.set_speed_mps(first.speed);
        }
        let clock = Instant::now();
        let started_unix_s = unix_now();
        let thread = thread::spawn(move || {
            while !flag.load(Ordering::Acquire) {
                let mut elapsed = clock.elapsed().as_secs_f64();
                if elapsed > duration {
                    if looped && duration > 0.0 {
                        elapsed %= duration;
                    } else {
                        state.set_speed_mps(last);
                        break;
                    }
                }
                state.set_speed_mps(profile.interpolate(t0 + elapsed).unwrap_or(last));
                thread::sleep(Duration::from_millis(2));
            }
        });
        Self {
            started_unix_s,
            stop,
            thread: Some(thread),
        }
    }

    /// UNIX time at which the first profile sample was applied.
    pub fn started_unix_s(&self) -> f64 {
        self.started_unix_s
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TrajectoryPlayer {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Blocking request-response client.
pub struct EcuClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    unit: ReportUnit,
}

impl EcuClient {
    pub fn connect(addr: &str, timeout: Duration, unit: ReportUnit) -> Result<Self, EcuError> {
        let connect_err = |source: io::Error| EcuError::ConnectFailure {
            addr: addr.to_string(),
            source,
        };
        let sock = addr
            .to_socket_addrs()
            .map_err(connect_err)?
            .next()
            .ok_or_else(|| connect_err(io::Error::new(ErrorKind::NotFound, "no address")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(connect_err)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            unit,
        })
    }

    /// Sends one raw command line and returns the answer without the prompt.
    pub fn command(&mut self, cmd: &[u8]) -> Result<String, EcuError> {
        let mut msg = cmd.to_vec();
        msg.push(b'\r');
        self.writer.write_all(&msg)?;
        let mut buf = Vec::with_capacity(16);
        match self.reader.read_until(PROMPT, &mut buf) {
            Ok(0) => return Err(EcuError::Closed),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Err(EcuError::Timeout)
            }
            Err(e) => return Err(e.into()),
        }
        if buf.last() != Some(&PROMPT) {
            return Err(EcuError::Closed);
        }
        buf.pop();
        Ok(String::from_utf8_lossy(&buf).trim().to_string())
    }

    /// Queries vehicle speed; the value is in the client's reporting unit.
    pub fn request_speed(&mut self) -> Result<u8, EcuError> {
        let answer = self.command(&encode_speed_request())?;
        if answer == NO_DATA {
            return Err(EcuError::NoData);
        }
        Ok(crate::codec::decode_speed_response(answer.as_bytes(), self.unit)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollConfig {
    pub endpoint: String,
    pub interval: Duration,
    pub duration: Duration,
    pub timeout: Duration,
    pub unit: ReportUnit,
}

impl PollConfig {
    pub fn new(endpoint: impl Into<String>, rate_hz: f64, duration_s: f64) -> Result<Self, EcuError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(EcuError::InvalidConfig(format!("poll rate must be > 0, got {rate_hz}")));
        }
        if !(duration_s.is_finite() && duration_s >= 0.0) {
            return Err(EcuError::InvalidConfig(format!("duration must be >= 0, got {duration_s}")));
        }
        Ok(Self {
            endpoint: endpoint.into(),
            interval: Duration::from_secs_f64(1.0 / rate_hz),
            duration: Duration::from_secs_f64(duration_s),
            timeout: Duration::from_millis(1000),
            unit: ReportUnit::KmPerHour,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollOutcome {
    /// Decoded readings in km/h, stamped on receipt (UNIX seconds).
    pub series: SpeedSeries,
    pub sent: usize,
    pub timeouts: usize,
    pub malformed: usize,
    pub no_data: usize,
}

/// Polls vehicle speed at a fixed rate for the configured duration.
pub fn poll(cfg: &PollConfig) -> Result<PollOutcome, EcuError> {
    if cfg.interval.is_zero() {
        return Err(EcuError::InvalidConfig("poll interval must be > 0".into()));
    }
    let mut client = EcuClient::connect(&cfg.endpoint, cfg.timeout, cfg.unit)?;
    let clock = Instant::now();
    let base_unix = unix_now();
    let to_kmh = match cfg.unit {
        ReportUnit::KmPerHour => 1.0,
        ReportUnit::MilesPerHour => KMH_PER_MPS / crate::MPH_PER_MPS,
    };

    let mut out = PollOutcome {
        series: SpeedSeries::new(SpeedUnit::Kmh, "obd"),
        sent: 0,
        timeouts: 0,
        malformed: 0,
        no_data: 0,
    };
    for k in 0u32.. {
        let due = cfg.interval * k;
        if due >= cfg.duration {
            break;
        }
        if let Some(wait) = due.checked_sub(clock.elapsed()) {
            thread::sleep(wait);
        }
        out.sent += 1;
        match client.request_speed() {
            Ok(v) => {
                let mut t = base_unix + clock.elapsed().as_secs_f64();
                if let Some(prev) = out.series.end() {
                    if t <= prev {
                        t = prev + 1e-6;
                    }
                }
                out.series.push(t, v as f64 * to_kmh);
            }
            Err(EcuError::Timeout) => {
                out.timeouts += 1;
                // a late answer would desynchronize the stream
                client = EcuClient::connect(&cfg.endpoint, cfg.timeout, cfg.unit)?;
            }
            Err(EcuError::Codec(e)) => {
                log::warn!("malformed response: {e}");
                out.malformed += 1;
            }
            Err(EcuError::NoData) => out.no_data += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
