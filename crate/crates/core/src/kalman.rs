//! Kalman-filter baseline on the vectorized tv-VAR state space.
//!
//! State `a(t) = vec(Phi(t)')` follows a random walk, `a(t) = a(t-1) + w(t)`
//! with `w ~ N(0, q I)`, and is observed through
//! `X(t) = C(t) a(t) + v(t)`, `C(t) = I_P (x) U(t)'`, `v ~ N(0, R)`.
//!
//! The state covariance is `(K P^2) x (K P^2)`; that quadratic-in-`P^2`
//! footprint is what makes this baseline expensive, and the filter refuses
//! to allocate past a configurable memory budget.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LagBuffer, ParamMatrix, Regressor, Sample};

/// Default cap on the state covariance allocation (4 GiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

#[derive(Debug, Clone)]
pub struct KalmanConfig {
    /// Per-coordinate state noise variance; `Q = q_sigma I`.
    pub q_sigma: f64,
    /// Observation noise covariance (identity when `None`).
    pub r: Option<DMatrix<f64>>,
    /// Initial covariance is `init_cov_scale * I`, initial mean zero.
    pub init_cov_scale: f64,
    pub memory_budget: u64,
}

impl KalmanConfig {
    pub fn new(q_sigma: f64) -> Self {
        Self {
            q_sigma,
            r: None,
            init_cov_scale: 1.0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn with_r(mut self, r: DMatrix<f64>) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.memory_budget = bytes;
        self
    }
}

/// Length of the state vector, `K P^2`.
pub fn state_dim(p: usize, k: usize) -> usize {
    k * p * p
}

/// Bytes needed for the `(K P^2)^2` state covariance.
pub fn covariance_bytes(p: usize, k: usize) -> u64 {
    let n = state_dim(p, k) as u64;
    n * n * std::mem::size_of::<f64>() as u64
}

pub fn check_budget(p: usize, k: usize, budget: u64) -> Result<()> {
    let needed = covariance_bytes(p, k);
    if needed > budget {
        return Err(Error::MemoryBudget {
            what: format!("Kalman state covariance for P={p}, K={k}"),
            needed_bytes: needed,
            budget_bytes: budget,
        });
    }
    Ok(())
}

/// `C(t) = I_P (x) U(t)'`, a `P x (K P^2)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    pub c: DMatrix<f64>,
}

pub fn build_observation_matrix(u: &Regressor, p: usize) -> Result<ObservationMatrix> {
    let m = u.len();
    if p == 0 || m == 0 || !m.is_multiple_of(p) {
        return Err(Error::Dimension(format!(
            "regressor length {m} is not a positive multiple of P={p}"
        )));
    }
    let mut c = DMatrix::zeros(p, p * m);
    for i in 0..p {
        c.view_mut((i, i * m), (1, m))
            .copy_from(&u.as_vector().transpose());
    }
    Ok(ObservationMatrix { c })
}

/// `a = vec(Phi')`: row `i` of `Phi` occupies `a[i*KP .. (i+1)*KP]`.
pub fn vectorize(phi: &ParamMatrix) -> DVector<f64> {
    let e = phi.entries();
    DVector::from_iterator(e.len(), (0..e.nrows()).flat_map(|i| e.row(i).iter().copied().collect::<Vec<_>>()))
}

pub fn unvectorize(a: &DVector<f64>, p: usize, k: usize) -> ParamMatrix {
    let m = k * p;
    let e = DMatrix::from_fn(p, m, |i, j| a[i * m + j]);
    ParamMatrix::from_matrix(e, k).expect("state length is K P^2")
}

#[derive(Debug, Clone)]
pub struct KalmanState {
    a: DVector<f64>,
    cov: DMatrix<f64>,
    q_var: f64,
    r: DMatrix<f64>,
    lags: LagBuffer,
    t: usize,
    phi: ParamMatrix,
    // scratch
    pct: DMatrix<f64>,
}

impl KalmanState {
    /// Fresh filter: `a = 0`, `cov = init_cov_scale * I`, lag buffer primed
    /// from `lags`. `t` is the index of the next sample.
    pub fn new(lags: LagBuffer, t: usize, config: &KalmanConfig) -> Result<Self> {
        let (p, k) = (lags.p(), lags.k());
        if !(config.q_sigma >= 0.0) || !config.q_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "q_sigma must be non-negative, got {}",
                config.q_sigma
            )));
        }
        check_budget(p, k, config.memory_budget)?;
        let r = match &config.r {
            Some(r) if r.nrows() == p && r.ncols() == p => r.clone(),
            Some(_) => return Err(Error::Dimension(format!("R must be {p}x{p}"))),
            None => DMatrix::identity(p, p),
        };
        let n = state_dim(p, k);
        Ok(Self {
            a: DVector::zeros(n),
            cov: DMatrix::identity(n, n) * config.init_cov_scale,
            q_var: config.q_sigma,
            r,
            lags,
            t,
            phi: ParamMatrix::zeros(p, k),
            pct: DMatrix::zeros(n, p),
        })
    }

    /// Start from the initial prior and filter through `warmup` (the first
    /// `k` samples only prime the lag buffer).
    pub fn init(warmup: &[Sample], k: usize, config: &KalmanConfig) -> Result<Self> {
        if warmup.len() < k + 1 {
            return Err(Error::InsufficientData {
                needed: k + 1,
                got: warmup.len(),
            });
        }
        let lags = LagBuffer::from_samples(&warmup[..k], k)?;
        let mut st = Self::new(lags, warmup[k].t, config)?;
        for s in &warmup[k..] {
            st.step(&s.values)?;
        }
        Ok(st)
    }

    pub fn p(&self) -> usize {
        self.lags.p()
    }

    pub fn k(&self) -> usize {
        self.lags.k()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn estimate(&self) -> &ParamMatrix {
        &self.phi
    }

    pub fn lags(&self) -> &LagBuffer {
        &self.lags
    }

    /// Predict with the random-walk transition, then update with `X(t)`.
    ///
    /// Uses the Kronecker structure of `C(t)` to avoid forming it: `cov C'`
    /// is computed block-row by block-row and the Joseph-form update is
    /// expanded into three `n x P x n` products. The result is the dense
    /// textbook filter up to rounding.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<&ParamMatrix> {
        let p = self.p();
        let m = self.lags.vector().len();
        let n = self.a.len();
        if x.len() != p {
            return Err(Error::Dimension(format!("sample has {} channels, expected {p}", x.len())));
        }
        if self.q_var != 0.0 {
            for i in 0..n {
                self.cov[(i, i)] += self.q_var;
            }
        }
        let u = self.lags.vector();

        // pct = cov C'; column i is cov[:, block i] u
        for i in 0..p {
            self.pct
                .column_mut(i)
                .gemv(1.0, &self.cov.columns(i * m, m), u, 0.0);
        }
        // S = C cov C' + R
        let mut s = self.r.clone();
        for j in 0..p {
            for i in 0..p {
                s[(i, j)] += u.dot(&self.pct.view((i * m, j), (m, 1)));
            }
        }
        let mut innov = x.clone();
        for i in 0..p {
            innov[i] -= u.dot(&self.a.rows(i * m, m));
        }
        let chol = s.clone().cholesky().ok_or_else(|| {
            Error::Singular(format!("innovation covariance at t={} is not positive definite", self.t))
        })?;
        // gain = pct S^-1
        let gain = chol.solve(&self.pct.transpose()).transpose();
        self.a.gemv(1.0, &gain, &innov, 1.0);

        // Joseph form: (I - G C) cov (I - G C)' + G R G'
        //            = cov - G pct' - pct G' + G S G'
        let pct_t = self.pct.transpose();
        let gain_t = gain.transpose();
        let s_gain_t = &s * &gain_t;
        self.cov.gemm(-1.0, &gain, &pct_t, 1.0);
        self.cov.gemm(-1.0, &self.pct, &gain_t, 1.0);
        self.cov.gemm(1.0, &gain, &s_gain_t, 1.0);
        symmetrize(&mut self.cov);

        self.phi = unvectorize(&self.a, p, self.k());
        self.lags.push(x);
        self.t += 1;
        Ok(&self.phi)
    }
}

/// In-place `(A + A') / 2`, tiled for cache locality.
fn symmetrize(a: &mut DMatrix<f64>) {
    const TILE: usize = 64;
    let n = a.nrows();
    for jb in (0..n).step_by(TILE) {
        for ib in (0..=jb).step_by(TILE) {
            for j in jb..(jb + TILE).min(n) {
                for i in ib..(ib + TILE).min(n).min(j) {
                    let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
        }
    }
}

pub fn kf_init(warmup: &[Sample], k: usize, config: &KalmanConfig) -> Result<KalmanState> {
    KalmanState::init(warmup, k, config)
}

/// Run the filter over `samples`, calling `f(t, Phi(t))` for each
/// post-warmup step (same warmup length as SOPE).
pub fn run_kf_with<F>(samples: &[Sample], k: usize, config: &KalmanConfig, mut f: F) -> Result<()>
where
    F: FnMut(usize, &ParamMatrix),
{
    let p = samples.first().map(Sample::dim).unwrap_or(0);
    let w = crate::sope::warmup_len(p, k);
    if samples.len() <= w {
        return Err(Error::InsufficientData {
            needed: w + 1,
            got: samples.len(),
        });
    }
    let mut st = KalmanState::init(&samples[..w], k, config)?;
    for s in &samples[w..] {
        let phi = st.step(&s.values)?;
        f(s.t, phi);
    }
    Ok(())
}

pub fn run_kf(samples: &[Sample], k: usize, config: &KalmanConfig) -> Result<Vec<ParamMatrix>> {
    let mut out = Vec::with_capacity(samples.len());
    run_kf_with(samples, k, config, |_, phi| out.push(phi.clone()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rng_for;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn observation_matrix_examples() {
        let u = Regressor::new(DVector::from_vec(vec![3.0, 4.0]));
        let c = build_observation_matrix(&u, 2).unwrap().c;
        assert_eq!(c, DMatrix::from_row_slice(2, 4, &[3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]));
        let c1 = build_observation_matrix(&Regressor::new(DVector::from_vec(vec![1.0, 2.0, 5.0])), 1)
            .unwrap()
            .c;
        assert_eq!(c1, DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 5.0]));
        assert!(build_observation_matrix(&Regressor::new(DVector::zeros(3)), 2).is_err());
    }

    #[test]
    fn observation_matrix_reshape_consistency() {
        let mut rng = rng_for(8, 0);
        for (p, k) in [(1, 1), (2, 3), (4, 2)] {
            let phi = ParamMatrix::from_matrix(
                DMatrix::from_fn(p, k * p, |_, _| rng.random::<f64>() - 0.5),
                k,
            )
            .unwrap();
            let u = Regressor::new(DVector::from_fn(k * p, |_, _| rng.random::<f64>()));
            let c = build_observation_matrix(&u, p).unwrap().c;
            let lhs = &c * vectorize(&phi);
            let rhs = phi.predict(&u);
            assert!((lhs - rhs).amax() < 1e-12);
            assert_eq!(unvectorize(&vectorize(&phi), p, k), phi);
        }
    }

    #[test]
    fn zero_regressor_only_inflates_covariance() {
        let lags = LagBuffer::new(2, 1);
        let mut st = KalmanState::new(lags, 1, &KalmanConfig::new(0.1)).unwrap();
        st.a = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let a0 = st.a.clone();
        let cov0 = st.cov.clone();
        st.step(&DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(st.a, a0);
        let expect = cov0 + DMatrix::identity(4, 4) * 0.1;
        assert_relative_eq!(st.cov, expect, epsilon = 1e-15);
    }

    #[test]
    fn budget_refusal() {
        let lags = LagBuffer::new(50, 3);
        let cfg = KalmanConfig::new(1e-3).with_budget(256 << 20);
        match KalmanState::new(lags, 0, &cfg) {
            Err(Error::MemoryBudget { needed_bytes, .. }) => {
                assert_eq!(needed_bytes, 7500u64 * 7500 * 8)
            }
            other => panic!("expected budget refusal, got {other:?}"),
        }
        assert_eq!(covariance_bytes(20, 3), 1200u64 * 1200 * 8);
    }

    #[test]
    fn symmetrize_averages() {
        let mut a = DMatrix::from_fn(130, 130, |i, j| (i * 7 + j * 3) as f64);
        let expect = (&a + a.transpose()) * 0.5;
        symmetrize(&mut a);
        assert_eq!(a, expect);
    }
}
