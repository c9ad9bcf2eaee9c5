use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nomamec_bench::scenario;
use nomamec_core::game::initial_assignment;
use nomamec_core::power::{allocate_power, p_init, MmConfig};
use nomamec_core::{alternating_optimize, epg_jdm, AoConfig, BaselineKind, GameConfig};

fn game(c: &mut Criterion) {
    let mut group = c.benchmark_group("epg_jdm");
    for n in [20, 40, 80] {
        let s = scenario(n, 1);
        let a = initial_assignment(&s, &mut s.init_rng());
        let p = p_init(&s, &a, 1e-3).powers;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| epg_jdm(&s, &p, &GameConfig::default()).unwrap()));
    }
    group.finish();
}

fn power(c: &mut Criterion) {
    let mut group = c.benchmark_group("allocate_power");
    group.sample_size(10);
    for n in [20, 80] {
        let s = scenario(n, 2);
        let a = BaselineKind::GaleShapley.assignment(&s, 1e-3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| allocate_power(&s, &a, &MmConfig::default()).unwrap()));
    }
    group.finish();
}

fn alternating(c: &mut Criterion) {
    let mut group = c.benchmark_group("alternating_optimize");
    group.sample_size(10);
    let s = scenario(40, 3);
    group.bench_function("n40", |b| b.iter(|| alternating_optimize(&s, &AoConfig::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, game, power, alternating);
criterion_main!(benches);
