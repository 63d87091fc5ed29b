mod common;

use common::{hermitian_min_eigenvalue, normal_matrix, random_spd, scale_to_radius};
use nalgebra::DMatrix;
use proptest::prelude::*;
use tvvar::model::{companion_spectral_radius, rng_for, ParamMatrix};
use tvvar::spectral::{
    band_connectivity, coherence, partial_coherence, pdc, spectral_frame, BandSpec, FreqSpec,
};

fn stable_phi(p: usize, k: usize, seed: u64, target: f64) -> ParamMatrix {
    let raw = normal_matrix(&mut rng_for(seed, 0), p, k * p, 1.0);
    let rho = companion_spectral_radius(&ParamMatrix::from_matrix(raw.clone(), k).unwrap());
    ParamMatrix::from_matrix(scale_to_radius(&raw, rho, target), k).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frame_invariants(
        p in 1usize..6, k in 1usize..4, seed in any::<u64>(),
        target in 0.05f64..0.95, omega in 0.0f64..500.0,
    ) {
        let phi = stable_phi(p, k, seed, target);
        let sigma = random_spd(&mut rng_for(seed, 1), p, 0.1);
        let f = spectral_frame(&phi, &sigma, omega, 1000.0).unwrap();
        let scale = f.s.iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!((&f.s - f.s.adjoint()).iter().all(|z| z.norm() <= 1e-10 * scale));
        prop_assert!(hermitian_min_eigenvalue(&f.s) >= -1e-9 * scale);
        for i in 0..p {
            prop_assert!((f.gamma_mat[(i, i)] - 1.0).norm() <= 1e-10);
        }
        let coh = coherence(&f).unwrap();
        let pc = partial_coherence(&f);
        let d = pdc(&f.phi_omega).unwrap();
        for m in [&coh, &pc, &d] {
            prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for j in 0..p {
            prop_assert!((d.column(j).norm_squared() - 1.0).abs() <= 1e-12);
        }
        // H inverts Phi(w)
        let eye = &f.h * &f.phi_omega;
        let inverts = (0..p).all(|i| (0..p).all(|j| {
            let target = if i == j { 1.0 } else { 0.0 };
            (eye[(i, j)].re - target).abs() <= 1e-8 && eye[(i, j)].im.abs() <= 1e-8
        }));
        prop_assert!(inverts);
    }

    #[test]
    fn white_noise_has_no_off_diagonal_connectivity(p in 2usize..6, seed in any::<u64>(), omega in 0.0f64..500.0) {
        let mut rng = rng_for(seed, 2);
        let diag: Vec<f64> = (0..p).map(|_| rand::Rng::random_range(&mut rng, 0.1..5.0)).collect();
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        let phi = ParamMatrix::zeros(p, 2);
        let f = spectral_frame(&phi, &sigma, omega, 1000.0).unwrap();
        for m in [coherence(&f).unwrap(), partial_coherence(&f), pdc(&f.phi_omega).unwrap()] {
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        prop_assert!(m[(i, j)] == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn band_average_is_the_mean_of_grid_points(p in 1usize..4, seed in any::<u64>(), target in 0.05f64..0.9) {
        let phi = stable_phi(p, 2, seed, target);
        let sigma = random_spd(&mut rng_for(seed, 3), p, 0.1);
        let freq = FreqSpec::uniform(100.0, 1.0).unwrap();
        let band = BandSpec::new("b", 8.0, 12.0).unwrap();
        let avg = band_connectivity(&phi, &sigma, &band, &freq).unwrap();
        prop_assert_eq!(avg.points, 5);
        let mut sum = DMatrix::zeros(p, p);
        for w in [8.0, 9.0, 10.0, 11.0, 12.0] {
            sum += coherence(&spectral_frame(&phi, &sigma, w, 100.0).unwrap()).unwrap();
        }
        prop_assert!((sum / 5.0 - &avg.coherence).amax() <= 1e-12);
    }
}

#[test]
fn ar1_spectrum_at_zero_is_four() {
    let phi = ParamMatrix::from_matrix(DMatrix::from_element(1, 1, 0.5), 1).unwrap();
    let f = spectral_frame(&phi, &DMatrix::identity(1, 1), 0.0, 1.0).unwrap();
    assert_eq!(f.s[(0, 0)].re, 4.0);
    assert_eq!(f.s[(0, 0)].im, 0.0);
}

#[test]
fn coherence_moves_smoothly_under_small_perturbations() {
    let phi = stable_phi(3, 2, 9, 0.6);
    let sigma = DMatrix::identity(3, 3);
    let base = coherence(&spectral_frame(&phi, &sigma, 40.0, 1000.0).unwrap()).unwrap();
    let eps = 1e-3;
    let bumped = ParamMatrix::from_matrix(phi.entries().map(|v| v + eps), 2).unwrap();
    let moved = coherence(&spectral_frame(&bumped, &sigma, 40.0, 1000.0).unwrap()).unwrap();
    assert!((moved - base).amax() <= 100.0 * eps);
}
