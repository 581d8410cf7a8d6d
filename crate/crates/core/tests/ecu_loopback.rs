use std::sync::Arc;
use std::thread;
use std::time::Duration;

use obdspeed_core::ecu::{poll, EcuClient, EcuError, EcuServer, EcuState, PollConfig, ServerHandle, TrajectoryPlayer};
use obdspeed_core::ingest::align;
use obdspeed_core::sim::{make_profile, ProfileSegment};
use obdspeed_core::{ReportUnit, SensorKind, SimConfig, SpeedUnit, KMH_PER_MPS};

fn serve(unit: ReportUnit) -> (Arc<EcuState>, ServerHandle) {
    serve_with(SimConfig::default(), unit)
}

fn serve_with(cfg: SimConfig, unit: ReportUnit) -> (Arc<EcuState>, ServerHandle) {
    let state = Arc::new(EcuState::new(cfg, unit).unwrap());
    let handle = EcuServer::bind("127.0.0.1:0", Arc::clone(&state)).unwrap().spawn().unwrap();
    (state, handle)
}

fn client(h: &ServerHandle, unit: ReportUnit) -> EcuClient {
    EcuClient::connect(&h.addr().to_string(), Duration::from_secs(2), unit).unwrap()
}

#[test]
fn every_byte_survives_the_socket() {
    let active = SimConfig {
        kind: SensorKind::ActiveWss,
        ..SimConfig::default()
    };
    let (state, h) = serve_with(active, ReportUnit::KmPerHour);
    let mut c = client(&h, ReportUnit::KmPerHour);
    for i in 0..10_000u32 {
        let kmh = (i % 256) as u8;
        state.set_speed_mps(kmh as f64 / KMH_PER_MPS);
        assert_eq!(c.request_speed().unwrap(), kmh);
    }
}

#[test]
fn mph_region_reports_mph() {
    let (state, h) = serve(ReportUnit::MilesPerHour);
    state.set_speed_mps(26.8224); // 60 mph
    assert_eq!(client(&h, ReportUnit::MilesPerHour).request_speed().unwrap(), 60);
}

#[test]
fn unsupported_pid_gets_no_data() {
    let (_state, h) = serve(ReportUnit::KmPerHour);
    let mut c = client(&h, ReportUnit::KmPerHour);
    assert_eq!(c.command(b"010C").unwrap(), "NO DATA");
    assert_eq!(c.command(b"garbage").unwrap(), "NO DATA");
    // the connection stays usable
    assert_eq!(c.request_speed().unwrap(), 0);
}

#[test]
fn poll_two_seconds_at_ten_hz() {
    let (state, h) = serve(ReportUnit::KmPerHour);
    state.set_speed_mps(50.0 / KMH_PER_MPS);
    let out = poll(&PollConfig::new(h.addr().to_string(), 10.0, 2.0).unwrap()).unwrap();
    assert!((19..=21).contains(&out.series.len()), "{} readings", out.series.len());
    assert!(out.series.samples.iter().all(|s| s.speed == 50.0));
    assert_eq!(out.series.unit, SpeedUnit::Kmh);
    assert_eq!(out.malformed + out.timeouts + out.no_data, 0);
}

#[test]
fn refused_connection_is_reported() {
    let addr = {
        let (_s, h) = serve(ReportUnit::KmPerHour);
        h.addr().to_string()
    };
    thread::sleep(Duration::from_millis(200));
    let err = poll(&PollConfig::new(addr.clone(), 10.0, 1.0).unwrap()).unwrap_err();
    match err {
        EcuError::ConnectFailure { addr: a, .. } => assert_eq!(a, addr),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn polled_log_tracks_played_trajectory() {
    let (state, h) = serve(ReportUnit::KmPerHour);
    let kmh = |v: f64| v / KMH_PER_MPS;
    let profile = make_profile(
        &[
            ProfileSegment::new(1.0, kmh(20.0), kmh(80.0)),
            ProfileSegment::new(1.0, kmh(80.0), kmh(40.0)),
        ],
        100.0,
    )
    .unwrap();
    let player = TrajectoryPlayer::start(Arc::clone(&state), &profile, false);
    let offset = player.started_unix_s();
    let out = poll(&PollConfig::new(h.addr().to_string(), 10.0, 2.0).unwrap()).unwrap();
    player.stop();

    let mut truth = profile.to_unit(SpeedUnit::Kmh);
    for s in &mut truth.samples {
        s.timestamp_s += offset;
    }
    let pairs = align(&out.series, &truth, 1.0).unwrap().pairs;
    assert!(pairs.len() >= 15, "{} aligned", pairs.len());
    // rounding plus scheduling jitter on a 60 km/h per second ramp
    let worst = pairs.iter().map(|p| p.error_kmh.abs()).fold(0.0, f64::max);
    assert!(worst < 4.0, "worst error {worst} km/h");
}

#[test]
fn concurrent_clients_are_independent() {
    let (state, h) = serve(ReportUnit::KmPerHour);
    state.set_speed_mps(90.0 / KMH_PER_MPS);
    let addr = h.addr().to_string();
    let workers: Vec<_> = (0..4)
        .map(|_| {
            let addr = addr.clone();
            thread::spawn(move || {
                let mut c = EcuClient::connect(&addr, Duration::from_secs(2), ReportUnit::KmPerHour).unwrap();
                (0..500).map(|_| c.request_speed().unwrap()).collect::<Vec<_>>()
            })
        })
        .collect();
    for w in workers {
        assert!(w.join().unwrap().iter().all(|&v| v == 90));
    }
}
