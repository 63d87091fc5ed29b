//! Data-parallel stages. Run once as is and once with
//! `--no-default-features` to compare the rayon and sequential builds;
//! benchmark ids carry the build name.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use tvvar::bench::{mse_sweep, DesignSampling};
use tvvar::estimator::EstimatorConfig;
use tvvar::model::{make_cosine_coeffs, rng_for, simulate_tvvar, SimSpec};
use tvvar::sope::{run_sope, warmup_len, PenaltySpec};
use tvvar::spectral::{connectivity_series, BandSpec, FreqSpec};

fn build() -> &'static str {
    if tvvar::par::is_parallel_build() {
        "rayon"
    } else {
        "sequential"
    }
}

fn replicate_sweep(c: &mut Criterion) {
    let sim = SimSpec::cosine(3, 2, 1000, 3);
    let configs: Vec<EstimatorConfig> = [1e3, 5e3, 1e4]
        .iter()
        .map(|&l| EstimatorConfig::sope(PenaltySpec::new(l, 0.9).unwrap()))
        .chain([EstimatorConfig::kf(1e-5)])
        .collect();
    c.bench_function(&format!("mse_sweep_8_replicates/{}", build()), |b| {
        b.iter(|| mse_sweep(&configs, &sim, 8, DesignSampling::PerReplicate).unwrap())
    });
}

fn spectral_grid(c: &mut Criterion) {
    let sim = SimSpec::cosine(5, 2, 400, 4);
    let path = make_cosine_coeffs(&sim, &mut rng_for(4, 0)).unwrap();
    let data = simulate_tvvar(&sim, &path, &mut rng_for(4, 1)).unwrap();
    let w = warmup_len(5, 2);
    let estimates: Vec<_> = run_sope(&data, 2, PenaltySpec::default())
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, phi)| (w + i, phi))
        .collect();
    let bands = [
        BandSpec::new("theta_alpha", 4.0, 12.0).unwrap(),
        BandSpec::new("slow_gamma", 20.0, 40.0).unwrap(),
    ];
    let freq = FreqSpec::uniform(1000.0, 1.0).unwrap();
    let sigma = DMatrix::identity(5, 5);
    c.bench_function(&format!("connectivity_series_{}_frames/{}", estimates.len(), build()), |b| {
        b.iter(|| connectivity_series(&estimates, &sigma, &bands, &freq).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = replicate_sweep, spectral_grid
}
criterion_main!(benches);
