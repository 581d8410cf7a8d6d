use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use obdspeed_core::analysis::{bin_errors, fit_variance_points, FitOptions};
use obdspeed_core::codec::{decode_speed_response, encode_speed_byte};
use obdspeed_core::ingest::align;
use obdspeed_core::sim::{make_profile, simulate, urban_segments};
use obdspeed_core::{BinOptions, ReportUnit, SimConfig, SpeedUnit, VarianceCoefficients};

fn codec(c: &mut Criterion) {
    let frames: Vec<Vec<u8>> = (0..=255u8).map(encode_speed_byte).collect();
    c.bench_function("decode 256 frames", |b| {
        b.iter(|| {
            for f in &frames {
                black_box(decode_speed_response(black_box(f), ReportUnit::KmPerHour).unwrap());
            }
        })
    });
}

fn fit(c: &mut Criterion) {
    let m = VarianceCoefficients::PASSIVE_WSS;
    let v: Vec<f64> = (0..25).map(|i| 2.0 + 4.0 * i as f64).collect();
    let y: Vec<f64> = v.iter().map(|&x| m.eval(x)).collect();
    c.bench_function("fit 25 bins", |b| {
        b.iter(|| fit_variance_points(black_box(&v), black_box(&y), None, &FitOptions::default()).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let truth = make_profile(&urban_segments(600.0, 0.4, 1).unwrap(), 10.0).unwrap();
    let cfg = SimConfig {
        noise: Some(VarianceCoefficients::PASSIVE_WSS),
        ..SimConfig::default()
    };
    c.bench_function("simulate 10 min at 10 Hz", |b| b.iter(|| simulate(black_box(&truth), &cfg).unwrap()));

    let obd = simulate(&truth, &cfg).unwrap();
    let reference = truth.to_unit(SpeedUnit::Kmh);
    c.bench_function("align and bin 6000 samples", |b| {
        b.iter(|| {
            let pairs = align(&obd, &reference, 1.0).unwrap().pairs;
            bin_errors(&pairs, &BinOptions::default()).unwrap()
        })
    });
}

criterion_group!(benches, codec, fit, pipeline);
criterion_main!(benches);
