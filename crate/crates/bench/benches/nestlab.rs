use criterion::{criterion_group, criterion_main, Criterion};
use nestlab::kneading::{detect_regular, straighten};
use nestlab::maps::MapFamily;
use nestlab::nest::{build_nest, NestBudget};
use nestlab::scan::{classify_parameter, Budgets};
use nestlab::stats::{bce_min_exponent, ce_series};
use nestlab::transversality::tsujii_sum;
use std::hint::black_box;

fn quadratic(a: f64) -> nestlab::MapInstance {
    MapFamily::Quadratic.instance(&[a]).unwrap()
}

fn orbit(c: &mut Criterion) {
    let ulam = quadratic(2.0);
    c.bench_function("ce_series ulam N=60", |b| b.iter(|| ce_series(black_box(&ulam), 60, None).unwrap()));
    c.bench_function("tsujii_sum ulam N=60", |b| b.iter(|| tsujii_sum(MapFamily::Quadratic, black_box(&[2.0]), &[1.0], 60).unwrap()));
    let m = quadratic(1.0);
    c.bench_function("detect_regular a=1", |b| b.iter(|| detect_regular(black_box(&m), 20_000, 1000).unwrap()));
}

fn nest(c: &mut Criterion) {
    let m = quadratic(1.7951);
    let mut g = c.benchmark_group("nest");
    g.sample_size(10);
    g.bench_function("build_nest a=1.7951 lite 5", |b| {
        b.iter(|| build_nest::<f64>(black_box(&m), &NestBudget { max_levels: 5, ..NestBudget::lite() }).unwrap())
    });
    g.bench_function("build_nest a=1.7951 enumerate 2", |b| {
        b.iter(|| build_nest::<f64>(black_box(&m), &NestBudget { max_levels: 2, ..NestBudget::default() }).unwrap())
    });
    g.bench_function("bce depth 12 ulam", |b| b.iter(|| bce_min_exponent(&quadratic(2.0), 12).unwrap()));
    g.finish();
}

fn classify(c: &mut Criterion) {
    let mut g = c.benchmark_group("classify");
    g.sample_size(10);
    let budgets = Budgets::default();
    g.bench_function("classify a=1.7951", |b| b.iter(|| classify_parameter(MapFamily::Quadratic, black_box(&[1.7951]), &budgets)));
    let p = MapFamily::PerturbedQuadratic.instance(&[1.8, 0.05]).unwrap();
    g.bench_function("straighten pquadratic", |b| b.iter(|| straighten(black_box(&p), 60, 1e-12).unwrap()));
    g.finish();
}

criterion_group!(benches, orbit, nest, classify);
criterion_main!(benches);
