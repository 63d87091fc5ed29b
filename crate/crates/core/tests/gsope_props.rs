mod common;

use common::{normal_matrix, normal_vector, random_spd};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tvvar::model::{rng_for, LagBuffer, ParamMatrix};
use tvvar::sope::PenaltySpec;
use tvvar::sope_general::{default_jitter, sym_sqrt_pair, GeneralSopeConfig, GeneralSopeState};

fn fresh(p: usize, k: usize, count: usize, burn_in: usize, rng: &mut impl rand::Rng) -> (GeneralSopeState, DVector<f64>) {
    let mut lags = LagBuffer::new(p, k);
    for _ in 0..k {
        lags.push(&normal_vector(rng, p));
    }
    let u = lags.vector().clone();
    let phi = ParamMatrix::from_matrix(normal_matrix(rng, p, k * p, 0.2), k).unwrap();
    let cfg = GeneralSopeConfig::new(PenaltySpec::new(20.0, 0.5).unwrap()).with_burn_in(burn_in);
    (GeneralSopeState::from_parts(phi, lags, 0, count, cfg).unwrap(), u)
}

fn push_lag(u: &mut DVector<f64>, x: &DVector<f64>) {
    let p = x.len();
    let n = u.len();
    let s = u.as_mut_slice();
    s.copy_within(0..n - p, p);
    s[..p].copy_from_slice(x.as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn running_covariance_is_the_batch_average(
        p in 1usize..5, k in 1usize..3, seed in any::<u64>(), count in 1usize..60, burn_in in 0usize..10,
    ) {
        let mut rng = rng_for(seed, 0);
        let (mut st, mut u) = fresh(p, k, count, burn_in, &mut rng);
        let mix = random_spd(&mut rng, p, 0.1).cholesky().unwrap().l();
        let mut outer = DMatrix::<f64>::zeros(p, p);
        let steps = 40;
        for _ in 0..steps {
            let x = &mix * normal_vector(&mut rng, p);
            let phi = st.step(&x).unwrap().entries().clone();
            let resid = &x - &phi * &u;
            outer += &resid * resid.transpose();
            push_lag(&mut u, &x);
            let s = st.sigma();
            prop_assert!((s - s.transpose()).amax() <= 1e-12);
            prop_assert!(s.clone().symmetric_eigenvalues().min() >= -1e-10);
        }
        let total = (count + steps) as f64;
        let batch = (DMatrix::identity(p, p) * count as f64 + outer) / total;
        prop_assert!((st.sigma() - &batch).amax() <= 1e-10 * batch.amax().max(1.0));
        prop_assert_eq!(st.count(), count + steps);
    }

    #[test]
    fn whitened_residual_norm_is_the_weighted_norm(p in 1usize..6, seed in any::<u64>()) {
        let mut rng = rng_for(seed, 1);
        let sigma = random_spd(&mut rng, p, 0.05);
        let jitter = default_jitter(&sigma);
        let (sq, isq) = sym_sqrt_pair(&sigma, jitter).unwrap();
        let regularized = &sigma + DMatrix::identity(p, p) * jitter;
        prop_assert!((&sq * &sq - &regularized).amax() <= 1e-10 * regularized.amax());
        let resid = normal_vector(&mut rng, p);
        let whitened = (&isq * &resid).norm_squared();
        let weighted = (resid.transpose() * regularized.try_inverse().unwrap() * &resid)[(0, 0)];
        prop_assert!((whitened - weighted).abs() <= 1e-9 * weighted.max(1.0));
    }

    #[test]
    fn whitened_update_equals_back_transformed_update(p in 1usize..5, k in 1usize..3, seed in any::<u64>()) {
        // with burn-in zero the first step whitens with Sigma = I (plus
        // jitter), which acts as a scalar rescaling of lambda
        let mut rng = rng_for(seed, 2);
        let (mut st, u) = fresh(p, k, 10, 0, &mut rng);
        let centre = st.estimate().entries().clone();
        let x = normal_vector(&mut rng, p);
        let scale = 1.0 + default_jitter(&DMatrix::identity(p, p));
        let plain = &centre + (&x - &centre * &u) * u.transpose() / (20.0 * scale + u.norm_squared());
        let got = st.step(&x).unwrap().entries().clone();
        prop_assert!((got - plain).amax() <= 1e-10);
    }
}

#[test]
fn scalar_steps_follow_the_closed_form() {
    let mut rng = rng_for(7, 3);
    let (mut st, mut u) = fresh(1, 1, 5, 0, &mut rng);
    let lambda = 20.0;
    let (mut m_prev, mut m_prev2) = (st.estimate().entries()[(0, 0)], st.estimate().entries()[(0, 0)]);
    for _ in 0..50 {
        let sig = st.sigma()[(0, 0)] + default_jitter(st.sigma());
        let x = normal_vector(&mut rng, 1);
        let centre = 1.5 * m_prev - 0.5 * m_prev2;
        let expect = centre + (x[0] - centre * u[0]) * u[0] / (sig * lambda + u[0] * u[0]);
        let got = st.step(&x).unwrap().entries()[(0, 0)];
        assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{got} vs {expect}");
        m_prev2 = m_prev;
        m_prev = got;
        u[0] = x[0];
    }
}
