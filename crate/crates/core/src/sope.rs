//! Smooth online parameter estimation (SOPE).
//!
//! Each step solves the penalized least-squares problem
//!
//! ```text
//! Phi(t) = argmin_b |X(t) - b U(t)|^2 + lambda |b - M(t)|_F^2,
//! M(t)   = Phi(t-1) + beta (Phi(t-1) - Phi(t-2)),
//! ```
//!
//! whose solution is `(X U' + lambda M)(U U' + lambda I)^-1`. `beta = 0`
//! penalizes the first difference, `beta = 1` the second difference, and
//! values in between mix the two (`lambda = lambda1 + lambda2`,
//! `beta = lambda2 / lambda`). A Gaussian prior centred on `M(t)` with
//! precision `lambda` gives the same estimate as its posterior mode.
//!
//! `U U' + lambda I` is a rank-one update of a scaled identity, so the
//! inverse is never formed: a step costs `O(P * K * P)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LagBuffer, ParamMatrix, Regressor, Sample};

/// Below this, `lambda + u'u` is treated as zero.
const DENOMINATOR_FLOOR: f64 = 1e-30;

/// Smoothing strength `lambda` (also written `alpha`) and momentum weight `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    #[serde(alias = "alpha")]
    pub lambda: f64,
    pub beta: f64,
}

impl PenaltySpec {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        let spec = Self { lambda, beta };
        spec.validate()?;
        Ok(spec)
    }

    /// First-difference penalty (`beta = 0`).
    pub fn first_order(lambda: f64) -> Result<Self> {
        Self::new(lambda, 0.0)
    }

    /// Second-difference penalty (`beta = 1`).
    pub fn second_order(lambda: f64) -> Result<Self> {
        Self::new(lambda, 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `lambda = 5000`, `beta = 0.9`.
impl Default for PenaltySpec {
    fn default() -> Self {
        Self {
            lambda: 5000.0,
            beta: 0.9,
        }
    }
}

/// Number of leading samples used to initialise an estimator.
pub fn warmup_len(p: usize, k: usize) -> usize {
    (2 * k * p).max(50)
}

/// `a (u u' + lambda I)^-1` via the Sherman-Morrison identity:
/// `a / lambda - (a u) u' / (lambda (lambda + u'u))`.
pub fn smw_apply(a_block: &DMatrix<f64>, u: &Regressor, lambda: f64) -> DMatrix<f64> {
    let u = u.as_vector();
    let s = u.dot(u);
    let mut out = a_block / lambda;
    if lambda + s <= DENOMINATOR_FLOOR {
        return out;
    }
    let au = a_block * u;
    out.ger(-1.0 / (lambda * (lambda + s)), &au, u, 1.0);
    out
}

/// Ridge least squares `(sum X U')(sum U U' + lambda I)^-1` over every
/// regression available in `samples`.
pub fn ridge_ls(samples: &[Sample], k: usize, lambda: f64) -> Result<ParamMatrix> {
    if samples.len() < k + 1 {
        return Err(Error::InsufficientData {
            needed: k + 1,
            got: samples.len(),
        });
    }
    let p = samples[0].dim();
    let n = k * p;
    let mut gram = DMatrix::<f64>::identity(n, n) * lambda;
    let mut cross = DMatrix::<f64>::zeros(p, n);
    let mut lags = LagBuffer::from_samples(&samples[..k], k)?;
    for s in &samples[k..] {
        if s.dim() != p {
            return Err(Error::Dimension(format!(
                "sample at t={} has {} channels, expected {p}",
                s.t,
                s.dim()
            )));
        }
        let u = lags.vector();
        gram.ger(1.0, u, u, 1.0);
        cross.ger(1.0, &s.values, u, 1.0);
        lags.push(&s.values);
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("ridge Gram matrix".into()))?;
    let phi_t = chol.solve(&cross.transpose());
    ParamMatrix::from_matrix(phi_t.transpose(), k)
}

/// Recursion memory: the last two estimates and the lag buffer.
#[derive(Debug, Clone)]
pub struct SopeState {
    phi_prev: ParamMatrix,
    phi_prev2: ParamMatrix,
    lags: LagBuffer,
    t: usize,
    penalty: PenaltySpec,
    resid: DVector<f64>,
}

impl SopeState {
    /// Initialise from a warmup window: ridge least squares (strength
    /// `lambda`) gives the starting estimate, used for both memory slots.
    pub fn init(warmup: &[Sample], k: usize, penalty: PenaltySpec) -> Result<Self> {
        penalty.validate()?;
        let phi = ridge_ls(warmup, k, penalty.lambda)?;
        let lags = LagBuffer::from_samples(warmup, k)?;
        let t = warmup.last().map(|s| s.t + 1).unwrap_or(0);
        Ok(Self::from_parts(phi.clone(), phi, lags, t, penalty))
    }

    /// Assemble a state from explicit previous estimates `Phi(t-1)`, `Phi(t-2)`.
    pub fn from_parts(
        phi_prev: ParamMatrix,
        phi_prev2: ParamMatrix,
        lags: LagBuffer,
        t: usize,
        penalty: PenaltySpec,
    ) -> Self {
        let p = phi_prev.p();
        Self {
            phi_prev,
            phi_prev2,
            lags,
            t,
            penalty,
            resid: DVector::zeros(p),
        }
    }

    pub fn p(&self) -> usize {
        self.phi_prev.p()
    }

    pub fn k(&self) -> usize {
        self.phi_prev.k()
    }

    /// Time index of the next sample to be consumed.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn penalty(&self) -> PenaltySpec {
        self.penalty
    }

    /// Latest estimate `Phi(t-1)`.
    pub fn estimate(&self) -> &ParamMatrix {
        &self.phi_prev
    }

    pub fn previous(&self) -> &ParamMatrix {
        &self.phi_prev2
    }

    pub fn lags(&self) -> &LagBuffer {
        &self.lags
    }

    /// Penalty centre `Phi(t-1) + beta (Phi(t-1) - Phi(t-2))`.
    pub fn prior_mean(&self) -> DMatrix<f64> {
        let b = self.penalty.beta;
        self.phi_prev.entries() * (1.0 + b) - self.phi_prev2.entries() * b
    }

    /// Consume `X(t)` and return `Phi(t)`.
    ///
    /// Evaluated as `M + (X - M U) U' / (lambda + U'U)`, which is the
    /// Sherman-Morrison form of `(X U' + lambda M)(U U' + lambda I)^-1`
    /// expanded and simplified; it avoids the `1 / lambda` cancellation of
    /// [`smw_apply`] when `lambda` is tiny.
    pub fn step(&mut self, x: &DVector<f64>) -> &ParamMatrix {
        let lambda = self.penalty.lambda;
        let beta = self.penalty.beta;
        let u = self.lags.vector();
        let s = u.dot(u);

        // phi_prev2 <- M
        {
            let m = self.phi_prev2.entries_mut();
            if beta == 0.0 {
                m.copy_from(self.phi_prev.entries());
            } else {
                m.zip_apply(self.phi_prev.entries(), |old, prev| {
                    *old = (1.0 + beta) * prev - beta * *old
                });
            }
        }
        let denom = lambda + s;
        if denom > DENOMINATOR_FLOOR {
            let m = self.phi_prev2.entries_mut();
            self.resid.copy_from(x);
            self.resid.gemv(-1.0, m, u, 1.0);
            m.ger(1.0 / denom, &self.resid, u, 1.0);
        }
        std::mem::swap(&mut self.phi_prev, &mut self.phi_prev2);
        self.lags.push(x);
        self.t += 1;
        &self.phi_prev
    }
}

/// Initialise a SOPE state from `warmup` (at least `k + 1` samples).
pub fn sope_init(warmup: &[Sample], k: usize, penalty: PenaltySpec) -> Result<SopeState> {
    SopeState::init(warmup, k, penalty)
}

/// Run SOPE over `samples`, calling `f(t, Phi(t))` for every post-warmup step.
pub fn run_sope_with<F>(samples: &[Sample], k: usize, penalty: PenaltySpec, mut f: F) -> Result<()>
where
    F: FnMut(usize, &ParamMatrix),
{
    let p = samples.first().map(Sample::dim).unwrap_or(0);
    let w = warmup_len(p, k);
    if samples.len() <= w {
        return Err(Error::InsufficientData {
            needed: w + 1,
            got: samples.len(),
        });
    }
    let mut state = SopeState::init(&samples[..w], k, penalty)?;
    for s in &samples[w..] {
        let phi = state.step(&s.values);
        f(s.t, phi);
    }
    Ok(())
}

/// Run SOPE over `samples`; one estimate per post-warmup sample.
pub fn run_sope(samples: &[Sample], k: usize, penalty: PenaltySpec) -> Result<Vec<ParamMatrix>> {
    let mut out = Vec::with_capacity(samples.len());
    run_sope_with(samples, k, penalty, |_, phi| out.push(phi.clone()))?;
    Ok(out)
}
