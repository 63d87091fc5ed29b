use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use tvvar::estimator::{Estimator, EstimatorConfig};
use tvvar::model::{rng_for, LagBuffer};
use tvvar::sope::PenaltySpec;

fn noise(p: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng_for(seed, 0);
    (0..n)
        .map(|_| DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng)))
        .collect()
}

fn cold(cfg: &EstimatorConfig, data: &[DVector<f64>], k: usize) -> Estimator {
    let p = data[0].len();
    let mut lags = LagBuffer::new(p, k);
    for x in &data[..k] {
        lags.push(x);
    }
    let mut est = Estimator::cold(lags, cfg).unwrap();
    for x in &data[k..k + 50] {
        est.step(x).unwrap();
    }
    est
}

fn step_cost(c: &mut Criterion) {
    let penalty = PenaltySpec::default();
    type Sizes = &'static [(usize, usize)];
    let cases: [(&str, EstimatorConfig, Sizes); 3] = [
        ("sope", EstimatorConfig::sope(penalty), &[(20, 3), (50, 3), (100, 3), (250, 5)]),
        ("gsope", EstimatorConfig::gsope(penalty), &[(20, 3), (50, 3)]),
        ("kf", EstimatorConfig::kf(1e-5), &[(5, 3), (10, 3), (20, 3)]),
    ];
    let mut group = c.benchmark_group("step");
    for (name, cfg, sizes) in cases {
        for &(p, k) in sizes {
            let data = noise(p, k + 51, 1);
            let est = cold(&cfg, &data, k);
            let x = data[k + 50].clone();
            group.bench_with_input(BenchmarkId::new(name, format!("P{p}K{k}")), &x, |b, x| {
                b.iter_batched_ref(|| est.clone(), |e| e.step(x).map(|_| ()), BatchSize::SmallInput)
            });
        }
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = step_cost
}
criterion_main!(benches);
