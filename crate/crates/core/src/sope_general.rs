//! SOPE with an unknown innovation covariance.
//!
//! Each step whitens the sample and its lags by `Sigma(t-1)^-1/2`, applies the
//! SOPE recursion in whitened coordinates and maps the estimate back:
//!
//! ```text
//! Phi(t) = Sigma^1/2 Phi~(t) (I_K (x) Sigma^-1/2)
//! ```
//!
//! The residual `R(t) = X(t) - Phi(t) U(t)` then feeds the running mean
//! `Sigma(t) = ((c-1)/c) Sigma(t-1) + R R' / c`, where `c` counts consumed
//! samples. Estimates are stored in the original coordinates so that a
//! change of whitening between steps is applied to the penalty centre too.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{LagBuffer, ParamMatrix, Sample};
use crate::sope::{ridge_ls, warmup_len, PenaltySpec};

/// Relative jitter added to the running covariance before factoring.
pub const DEFAULT_JITTER_SCALE: f64 = 1e-8;
const JITTER_FLOOR: f64 = 1e-300;
const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric square root and inverse square root of `sigma + jitter I`.
///
/// Eigenvalues are clamped below at `jitter`; with `jitter = 0` a singular
/// input is rejected.
pub fn sym_sqrt_pair(sigma: &DMatrix<f64>, jitter: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            n,
            sigma.ncols()
        )));
    }
    let scale = sigma.amax().max(1.0);
    let asym = (sigma - sigma.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let shifted = sigma + DMatrix::identity(n, n) * jitter;
    let eig = SymmetricEigen::new(shifted);
    let vals = eig.eigenvalues.map(|v| v.max(jitter));
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Singular(
            "covariance has a zero eigenvalue and no jitter".into(),
        ));
    }
    let q = &eig.eigenvectors;
    let sqrt = q * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * q.transpose();
    let inv_sqrt = q * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt())) * q.transpose();
    Ok((sqrt, inv_sqrt))
}

pub fn default_jitter(sigma: &DMatrix<f64>) -> f64 {
    let p = sigma.nrows().max(1) as f64;
    (DEFAULT_JITTER_SCALE * sigma.trace() / p).max(JITTER_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralSopeConfig {
    pub penalty: PenaltySpec,
    /// Steps after the warmup during which whitening stays at identity.
    /// `None` means `10 P`.
    pub burn_in: Option<usize>,
}

impl GeneralSopeConfig {
    pub fn new(penalty: PenaltySpec) -> Self {
        Self {
            penalty,
            burn_in: None,
        }
    }

    pub fn with_burn_in(mut self, steps: usize) -> Self {
        self.burn_in = Some(steps);
        self
    }

    fn burn_in_for(&self, p: usize) -> usize {
        self.burn_in.unwrap_or(10 * p)
    }
}

#[derive(Debug, Clone)]
pub struct GeneralSopeState {
    phi_prev: ParamMatrix,
    phi_prev2: ParamMatrix,
    lags: LagBuffer,
    penalty: PenaltySpec,
    sigma: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
    sigma_sqrt_inv: DMatrix<f64>,
    /// Samples represented in `sigma` (the identity prior counts as the warmup).
    count: usize,
    t: usize,
    steps: usize,
    burn_in: usize,
}

impl GeneralSopeState {
    /// Ridge initialisation on `warmup`; `Sigma` starts at the identity and
    /// is weighted as if it summarised the warmup samples.
    pub fn init(warmup: &[Sample], k: usize, config: GeneralSopeConfig) -> Result<Self> {
        config.penalty.validate()?;
        let phi = ridge_ls(warmup, k, config.penalty.lambda)?;
        let lags = LagBuffer::from_samples(warmup, k)?;
        let t = warmup.last().map(|s| s.t + 1).unwrap_or(0);
        Self::from_parts(phi, lags, t, warmup.len(), config)
    }

    /// State with both memory slots at `phi`, `Sigma = I` weighted as
    /// `count` samples, and `t` the index of the next sample.
    pub fn from_parts(
        phi: ParamMatrix,
        lags: LagBuffer,
        t: usize,
        count: usize,
        config: GeneralSopeConfig,
    ) -> Result<Self> {
        let p = phi.p();
        let sigma = DMatrix::identity(p, p);
        let (sigma_sqrt, sigma_sqrt_inv) = sym_sqrt_pair(&sigma, default_jitter(&sigma))?;
        Ok(Self {
            phi_prev2: phi.clone(),
            phi_prev: phi,
            lags,
            penalty: config.penalty,
            sigma,
            sigma_sqrt,
            sigma_sqrt_inv,
            count,
            t,
            steps: 0,
            burn_in: config.burn_in_for(p),
        })
    }

    pub fn p(&self) -> usize {
        self.phi_prev.p()
    }

    pub fn k(&self) -> usize {
        self.phi_prev.k()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn estimate(&self) -> &ParamMatrix {
        &self.phi_prev
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt
    }

    pub fn sigma_sqrt_inv(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt_inv
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Whether the step about to run whitens with the running covariance.
    pub fn is_whitening(&self) -> bool {
        self.steps >= self.burn_in
    }

    /// Consume `X(t)` and return `Phi(t)`.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<&ParamMatrix> {
        let p = self.p();
        let k = self.k();
        if x.len() != p {
            return Err(Error::Dimension(format!(
                "sample has {} channels, expected {p}",
                x.len()
            )));
        }
        let beta = self.penalty.beta;
        let lambda = self.penalty.lambda;
        let centre = self.phi_prev.entries() * (1.0 + beta) - self.phi_prev2.entries() * beta;
        let u = self.lags.vector();

        let next = if self.is_whitening() {
            let w = &self.sigma_sqrt_inv;
            let w_inv = &self.sigma_sqrt;
            let mut centre_w = DMatrix::zeros(p, k * p);
            let mut u_w = DVector::zeros(k * p);
            for l in 0..k {
                let block = centre.columns(l * p, p);
                centre_w
                    .columns_mut(l * p, p)
                    .copy_from(&(w * block * w_inv));
                u_w.rows_mut(l * p, p).copy_from(&(w * u.rows(l * p, p)));
            }
            let x_w = w * x;
            let est_w = innovation_update(centre_w, &x_w, &u_w, lambda);
            let mut est = DMatrix::zeros(p, k * p);
            for l in 0..k {
                let block = est_w.columns(l * p, p);
                est.columns_mut(l * p, p).copy_from(&(w_inv * block * w));
            }
            est
        } else {
            innovation_update(centre, x, u, lambda)
        };

        let resid = x - &next * u;
        self.count += 1;
        let c = self.count as f64;
        self.sigma *= (c - 1.0) / c;
        self.sigma.ger(1.0 / c, &resid, &resid, 1.0);
        self.sigma = (&self.sigma + self.sigma.transpose()) * 0.5;
        let (sq, isq) = sym_sqrt_pair(&self.sigma, default_jitter(&self.sigma))?;
        self.sigma_sqrt = sq;
        self.sigma_sqrt_inv = isq;

        std::mem::swap(&mut self.phi_prev, &mut self.phi_prev2);
        *self.phi_prev.entries_mut() = next;
        self.lags.push(x);
        self.t += 1;
        self.steps += 1;
        Ok(&self.phi_prev)
    }
}

/// `M + (x - M u) u' / (lambda + u'u)`; leaves `M` alone for a zero denominator.
fn innovation_update(
    mut centre: DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let denom = lambda + u.dot(u);
    if denom > 1e-30 {
        let resid = x - &centre * u;
        centre.ger(1.0 / denom, &resid, u, 1.0);
    }
    centre
}

pub fn gsope_init(
    warmup: &[Sample],
    k: usize,
    config: GeneralSopeConfig,
) -> Result<GeneralSopeState> {
    GeneralSopeState::init(warmup, k, config)
}

/// Run the generalized recursion, calling `f(t, Phi(t), Sigma(t))` per
/// post-warmup step.
pub fn run_gsope_with<F>(
    samples: &[Sample],
    k: usize,
    config: GeneralSopeConfig,
    mut f: F,
) -> Result<()>
where
    F: FnMut(usize, &ParamMatrix, &DMatrix<f64>),
{
    let p = samples.first().map(Sample::dim).unwrap_or(0);
    let w = warmup_len(p, k);
    if samples.len() <= w {
        return Err(Error::InsufficientData {
            needed: w + 1,
            got: samples.len(),
        });
    }
    let mut state = GeneralSopeState::init(&samples[..w], k, config)?;
    for s in &samples[w..] {
        state.step(&s.values)?;
        f(s.t, &state.phi_prev, &state.sigma);
    }
    Ok(())
}

pub fn run_gsope(
    samples: &[Sample],
    k: usize,
    config: GeneralSopeConfig,
) -> Result<Vec<ParamMatrix>> {
    let mut out = Vec::with_capacity(samples.len());
    run_gsope_with(samples, k, config, |_, phi, _| out.push(phi.clone()))?;
    Ok(out)
}
