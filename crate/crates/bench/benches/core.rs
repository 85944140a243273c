use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use geoar_bench::{message, reference};
use geoar_core::eval::{run_scenario, ScenarioConfig};
use geoar_core::geodesy::{destination, geo_to_local, haversine_distance};
use geoar_core::kml::{decode_kml, encode_kml};
use geoar_core::protocol::{Throttle, ThrottlePolicy};

fn geodesy(c: &mut Criterion) {
    let r = reference();
    let p = destination(&r, 37.0, 250.0);
    c.bench_function("haversine_distance", |b| b.iter(|| haversine_distance(black_box(&r), black_box(&p))));
    c.bench_function("geo_to_local", |b| b.iter(|| geo_to_local(black_box(&r), black_box(&p))));
    c.bench_function("destination", |b| b.iter(|| destination(black_box(&r), 37.0, 250.0)));
}

fn kml(c: &mut Criterion) {
    let msg = message(42);
    let text = encode_kml(&msg);
    c.bench_function("encode_kml", |b| b.iter(|| encode_kml(black_box(&msg))));
    c.bench_function("decode_kml", |b| b.iter(|| decode_kml(black_box(&text))));
}

fn throttle(c: &mut Criterion) {
    c.bench_function("throttle_admit_100hz", |b| {
        let mut t = Throttle::new(ThrottlePolicy::default());
        let mut now = Duration::ZERO;
        b.iter(|| {
            now += Duration::from_millis(10);
            t.admit(black_box("gps"), now)
        })
    });
}

fn scenario(c: &mut Criterion) {
    let cfg = ScenarioConfig::default_scenario();
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    g.bench_function("default_in_process", |b| b.iter(|| run_scenario(black_box(&cfg)).unwrap()));
    g.finish();
}

criterion_group!(benches, geodesy, kml, throttle, scenario);
criterion_main!(benches);
