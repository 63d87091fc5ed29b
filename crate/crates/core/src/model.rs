//! The tv-VAR data model: samples, coefficient blocks, regressors, and the
//! cosine-coefficient simulator used by the accuracy studies.
//!
//! Model: `X(t) = sum_{l=1..K} Phi_{t,l} X(t-l) + E(t)`, with the K lag
//! blocks concatenated into one `P x (K*P)` matrix `Phi(t)` and the past
//! observations stacked newest-first into the regressor `U(t)`, so that
//! `X(t) = Phi(t) U(t) + E(t)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DMatrixView, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral radius above which the simulator halves the cosine amplitudes.
pub const STATIONARITY_TARGET: f64 = 0.98;
/// Maximum number of amplitude halvings tried by [`make_cosine_coeffs`].
pub const MAX_HALVINGS: usize = 20;

/// Deterministic RNG for replicate `stream` under a base `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One multichannel observation `X(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: usize,
    pub values: DVector<f64>,
}

impl Sample {
    pub fn new(t: usize, values: DVector<f64>) -> Self {
        Self { t, values }
    }

    pub fn from_slice(t: usize, values: &[f64]) -> Self {
        Self::new(t, DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Concatenated lag coefficients `Phi(t) = [Phi_{t,1}, ..., Phi_{t,K}]`.
///
/// Column block `l - 1` (columns `(l-1)P .. lP`) holds the lag-`l` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    entries: DMatrix<f64>,
    p: usize,
    k: usize,
}

impl ParamMatrix {
    pub fn zeros(p: usize, k: usize) -> Self {
        Self {
            entries: DMatrix::zeros(p, k * p),
            p,
            k,
        }
    }

    /// Wrap a `P x (K*P)` matrix. `P` is taken from the row count.
    pub fn from_matrix(entries: DMatrix<f64>, k: usize) -> Result<Self> {
        let p = entries.nrows();
        if k == 0 || entries.ncols() != k * p {
            return Err(Error::Dimension(format!(
                "coefficient matrix is {}x{}, expected {}x{} for order {}",
                entries.nrows(),
                entries.ncols(),
                p,
                k * p,
                k
            )));
        }
        Ok(Self { entries, p, k })
    }

    /// Concatenate per-lag `P x P` blocks, lag 1 first.
    pub fn from_lags(lags: &[DMatrix<f64>]) -> Result<Self> {
        let k = lags.len();
        if k == 0 {
            return Err(Error::Dimension("at least one lag block required".into()));
        }
        let p = lags[0].nrows();
        let mut entries = DMatrix::zeros(p, k * p);
        for (l, block) in lags.iter().enumerate() {
            if block.nrows() != p || block.ncols() != p {
                return Err(Error::Dimension(format!("lag {} block is not {p}x{p}", l + 1)));
            }
            entries.columns_mut(l * p, p).copy_from(block);
        }
        Ok(Self { entries, p, k })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// The lag-`l` block (`1 <= l <= K`).
    pub fn lag(&self, l: usize) -> DMatrixView<'_, f64> {
        assert!(l >= 1 && l <= self.k, "lag {l} out of range 1..={}", self.k);
        self.entries.columns((l - 1) * self.p, self.p)
    }

    /// One-step prediction `Phi U`.
    pub fn predict(&self, u: &Regressor) -> DVector<f64> {
        &self.entries * u.as_vector()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    /// `(K*P) x (K*P)` companion matrix of the frozen-coefficient VAR.
    pub fn companion(&self) -> DMatrix<f64> {
        let n = self.k * self.p;
        let mut c = DMatrix::zeros(n, n);
        c.rows_mut(0, self.p).copy_from(&self.entries);
        for i in self.p..n {
            c[(i, i - self.p)] = 1.0;
        }
        c
    }
}

/// Spectral radius of the companion matrix of `phi`.
///
/// Strictly below one iff the frozen-coefficient VAR at that time point is
/// stationary.
pub fn companion_spectral_radius(phi: &ParamMatrix) -> f64 {
    let n = phi.k * phi.p;
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return phi.entries[(0, 0)].abs();
    }
    if phi.entries.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let comp = phi.companion();
    // the unbounded Schur iteration in `complex_eigenvalues` can cycle on
    // some inputs, so cap it and fall back to repeated squaring
    match Schur::try_new(comp.clone(), f64::EPSILON, SCHUR_MAX_ITER * n) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => gelfand_radius(comp),
    }
}

const SCHUR_MAX_ITER: usize = 200;

/// `|A^m|^(1/m)` for `m = 2^60`, by normalised repeated squaring. Slightly
/// above the true radius when `A` is defective.
fn gelfand_radius(mut a: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..60 {
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale += norm.ln() / power;
        a = &a * &a;
        power *= 2.0;
    }
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (log_scale + norm.ln() / power).exp()
}

/// Stacked past observations `U(t) = [X(t-1)', ..., X(t-K)']'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor(DVector<f64>);

impl Regressor {
    pub fn new(u: DVector<f64>) -> Self {
        Self(u)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Split back into `[X(t-1), ..., X(t-K)]`.
    pub fn unstack(&self, p: usize) -> Vec<DVector<f64>> {
        self.0
            .as_slice()
            .chunks(p)
            .map(DVector::from_column_slice)
            .collect()
    }
}

/// Build `U(t)` from the last `k` samples of `buffer`, which is in time
/// order (oldest first).
pub fn build_regressor(buffer: &[Sample], k: usize) -> Result<Regressor> {
    if k == 0 || buffer.len() < k {
        return Err(Error::InsufficientData {
            needed: k.max(1),
            got: buffer.len(),
        });
    }
    let p = buffer[buffer.len() - 1].dim();
    let mut u = DVector::zeros(k * p);
    for (lag, sample) in buffer.iter().rev().take(k).enumerate() {
        if sample.dim() != p {
            return Err(Error::Dimension(format!(
                "sample at t={} has {} channels, expected {p}",
                sample.t,
                sample.dim()
            )));
        }
        u.rows_mut(lag * p, p).copy_from(&sample.values);
    }
    Ok(Regressor(u))
}

/// Shift register holding the regressor for the next time step.
///
/// `push(X(t))` makes `regressor()` return `U(t+1)`.
#[derive(Debug, Clone)]
pub struct LagBuffer {
    p: usize,
    k: usize,
    u: DVector<f64>,
    filled: usize,
}

impl LagBuffer {
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            p,
            k,
            u: DVector::zeros(k * p),
            filled: 0,
        }
    }

    /// Buffer primed with the last `k` of `samples` (time order).
    pub fn from_samples(samples: &[Sample], k: usize) -> Result<Self> {
        let u = build_regressor(samples, k)?;
        let p = u.len() / k;
        Ok(Self {
            p,
            k,
            u: u.0,
            filled: k,
        })
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        debug_assert_eq!(x.len(), self.p);
        let p = self.p;
        let n = self.u.len();
        let s = self.u.as_mut_slice();
        s.copy_within(0..n - p, p);
        s[..p].copy_from_slice(x.as_slice());
        self.filled = (self.filled + 1).min(self.k);
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn regressor(&self) -> Regressor {
        Regressor(self.u.clone())
    }
}

/// Additive step change applied to one coefficient from `time` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: usize,
    pub row: usize,
    /// Column in the concatenated `P x (K*P)` layout.
    pub col: usize,
    pub delta: f64,
}

/// Simulation design for the cosine-coefficient tv-VAR.
///
/// Channel indices in `groups` are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub p: usize,
    pub k: usize,
    pub t_total: usize,
    pub groups: Vec<Vec<usize>>,
    pub amp_diag_range: [f64; 2],
    pub amp_offdiag_range: [f64; 2],
    pub noise_cov: Vec<Vec<f64>>,
    pub seed: u64,
    #[serde(default)]
    pub discontinuities: Vec<Jump>,
}

impl SimSpec {
    pub const DEFAULT_DIAG_RANGE: [f64; 2] = [0.3, 0.7];
    pub const DEFAULT_OFFDIAG_RANGE: [f64; 2] = [-0.2, 0.2];

    /// Fully coupled design: one group, default amplitude ranges, identity noise.
    pub fn cosine(p: usize, k: usize, t_total: usize, seed: u64) -> Self {
        Self {
            p,
            k,
            t_total,
            groups: vec![(0..p).collect()],
            amp_diag_range: Self::DEFAULT_DIAG_RANGE,
            amp_offdiag_range: Self::DEFAULT_OFFDIAG_RANGE,
            noise_cov: identity_rows(p),
            seed,
            discontinuities: Vec::new(),
        }
    }

    /// Five channels in two groups, `{0,1,2}` and `{3,4}`, order one.
    pub fn two_group_p5(t_total: usize, seed: u64) -> Self {
        Self {
            groups: vec![vec![0, 1, 2], vec![3, 4]],
            ..Self::cosine(5, 1, t_total, seed)
        }
    }

    pub fn with_groups(mut self, groups: Vec<Vec<usize>>) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_noise_cov(mut self, cov: &DMatrix<f64>) -> Self {
        self.noise_cov = (0..cov.nrows())
            .map(|i| cov.row(i).iter().copied().collect())
            .collect();
        self
    }

    pub fn noise_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| self.noise_cov[i][j])
    }

    /// Group label of each channel.
    fn group_of(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.p];
        for (g, members) in self.groups.iter().enumerate() {
            for &c in members {
                if c < self.p {
                    label[c] = g;
                }
            }
        }
        label
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.k == 0 {
            return Err(Error::InvalidParameter("p and k must be positive".into()));
        }
        if self.t_total <= self.k {
            return Err(Error::InvalidParameter(format!(
                "t_total ({}) must exceed the order ({})",
                self.t_total, self.k
            )));
        }
        let mut seen = vec![false; self.p];
        for members in &self.groups {
            for &c in members {
                if c >= self.p || seen[c] {
                    return Err(Error::InvalidParameter(format!(
                        "groups must partition 0..{}: bad or repeated channel {c}",
                        self.p
                    )));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(format!(
                "groups must cover every channel 0..{}",
                self.p
            )));
        }
        for (name, r) in [
            ("amp_diag_range", self.amp_diag_range),
            ("amp_offdiag_range", self.amp_offdiag_range),
        ] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::InvalidParameter(format!("{name}: need lower <= upper")));
            }
        }
        if self.noise_cov.len() != self.p || self.noise_cov.iter().any(|r| r.len() != self.p) {
            return Err(Error::Dimension(format!("noise_cov must be {0}x{0}", self.p)));
        }
        for j in &self.discontinuities {
            if j.row >= self.p || j.col >= self.k * self.p || j.time >= self.t_total {
                return Err(Error::InvalidParameter(format!("discontinuity out of range: {j:?}")));
            }
        }
        Ok(())
    }
}

fn identity_rows(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Amplitudes and phases of `Phi(t)_{ij} = A_{ij} cos(pi t / T + B_{ij})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineDesign {
    pub amplitude: DMatrix<f64>,
    pub phase: DMatrix<f64>,
    pub k: usize,
    pub t_total: usize,
}

impl CosineDesign {
    /// Draw amplitudes (zero across groups) and phases uniform on `[0, 2 pi)`.
    pub fn draw<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let p = spec.p;
        let group = spec.group_of();
        let phase_dist = Uniform::new(0.0, 2.0 * PI).expect("valid phase range");
        let mut amplitude = DMatrix::zeros(p, spec.k * p);
        let mut phase = DMatrix::zeros(p, spec.k * p);
        for l in 0..spec.k {
            for i in 0..p {
                for j in 0..p {
                    let col = l * p + j;
                    // Draw the phase unconditionally so that changing the
                    // group layout does not shift the random stream.
                    phase[(i, col)] = phase_dist.sample(rng);
                    let [lo, hi] = if i == j {
                        spec.amp_diag_range
                    } else {
                        spec.amp_offdiag_range
                    };
                    let a = lo + (hi - lo) * rng.random::<f64>();
                    if group[i] == group[j] {
                        amplitude[(i, col)] = a;
                    }
                }
            }
        }
        Ok(Self {
            amplitude,
            phase,
            k: spec.k,
            t_total: spec.t_total,
        })
    }

    pub fn at(&self, t: usize) -> ParamMatrix {
        let arg = PI * t as f64 / self.t_total as f64;
        let entries = self
            .amplitude
            .zip_map(&self.phase, |a, b| if a == 0.0 { 0.0 } else { a * (arg + b).cos() });
        ParamMatrix::from_matrix(entries, self.k).expect("design dimensions are consistent")
    }

    pub fn path(&self) -> CoeffPath {
        CoeffPath::new((0..self.t_total).map(|t| self.at(t)).collect())
    }
}

/// Ground-truth coefficients `Phi(t)` for `t = 0 .. T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPath {
    mats: Vec<ParamMatrix>,
}

impl CoeffPath {
    pub fn new(mats: Vec<ParamMatrix>) -> Self {
        Self { mats }
    }

    pub fn constant(phi: ParamMatrix, t_total: usize) -> Self {
        Self::new(vec![phi; t_total])
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn at(&self, t: usize) -> &ParamMatrix {
        &self.mats[t]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ParamMatrix> {
        self.mats.iter()
    }

    pub fn max_spectral_radius(&self) -> f64 {
        self.mats
            .iter()
            .map(companion_spectral_radius)
            .fold(0.0, f64::max)
    }

    fn apply_jumps(&mut self, jumps: &[Jump]) {
        for j in jumps {
            for phi in &mut self.mats[j.time..] {
                phi.entries_mut()[(j.row, j.col)] += j.delta;
            }
        }
    }
}

/// Random cosine coefficient path for the design `spec`, rescaled to be stationary at
/// every time point.
///
/// Amplitudes are halved until the largest companion spectral radius over
/// the path drops below [`STATIONARITY_TARGET`]. Discontinuities are added
/// afterwards and the path is checked again (radius must stay below one).
pub fn make_cosine_coeffs<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<CoeffPath> {
    let mut design = CosineDesign::draw(spec, rng)?;
    let mut radius = f64::INFINITY;
    for _ in 0..=MAX_HALVINGS {
        let mut path = design.path();
        radius = path.max_spectral_radius();
        if radius < STATIONARITY_TARGET {
            if !spec.discontinuities.is_empty() {
                path.apply_jumps(&spec.discontinuities);
                let r = path.max_spectral_radius();
                if r >= 1.0 {
                    return Err(Error::NotStationary {
                        halvings: 0,
                        radius: r,
                    });
                }
            }
            return Ok(path);
        }
        design.amplitude *= 0.5;
    }
    Err(Error::NotStationary {
        halvings: MAX_HALVINGS,
        radius,
    })
}

/// Factor `L` with `L L' = cov` for a symmetric PSD matrix (singular allowed).
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let scale = cov.amax().max(1.0);
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Simulate `X(t) = Phi(t) U(t) + E(t)` for `t = 0 .. path.len()-1`.
///
/// The first K values are drawn from the noise distribution and a burn-in of
/// `10 K` steps under `Phi(0)` is discarded before `t = 0`.
pub fn simulate_tvvar<R: Rng + ?Sized>(
    spec: &SimSpec,
    path: &CoeffPath,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    if path.is_empty() {
        return Ok(Vec::new());
    }
    let (p, k) = (spec.p, spec.k);
    if path.at(0).p() != p || path.at(0).k() != k {
        return Err(Error::Dimension("coefficient path does not match the simulation design".into()));
    }
    let factor = psd_factor(&spec.noise_matrix())?;
    let mut noise = || -> DVector<f64> {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut *rng));
        &factor * z
    };

    let mut lags = LagBuffer::new(p, k);
    for _ in 0..k {
        let e = noise();
        lags.push(&e);
    }
    let phi0 = path.at(0).entries();
    for _ in 0..10 * k {
        let x = phi0 * lags.vector() + noise();
        lags.push(&x);
    }
    let mut out = Vec::with_capacity(path.len());
    for (t, phi) in path.iter().enumerate() {
        let x = phi.entries() * lags.vector() + noise();
        lags.push(&x);
        out.push(Sample::new(t, x));
    }
    Ok(out)
}
