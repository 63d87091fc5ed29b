//! Time-varying spectra and connectivity from coefficient estimates.
//!
//! For a coefficient matrix `Phi(t)` and innovation covariance `Sigma`:
//!
//! ```text
//! Phi(t, w) = I - sum_l Phi_l exp(-i 2 pi l w / ws)
//! H = Phi(t, w)^-1,  S = H Sigma H*,  G = S^-1,
//! Gamma = diag(G)^-1/2 G diag(G)^-1/2
//! ```
//!
//! Coherence, partial coherence and partial directed coherence (PDC) are
//! read off these matrices and averaged over the grid points inside a band.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamMatrix;
use crate::par;

pub type C64 = Complex<f64>;

/// Frames whose 1-norm condition number exceeds this are flagged unstable.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqSpec {
    pub omega_s: f64,
    pub grid: Vec<f64>,
}

impl FreqSpec {
    pub fn new(omega_s: f64, grid: Vec<f64>) -> Result<Self> {
        let spec = Self { omega_s, grid };
        spec.validate()?;
        Ok(spec)
    }

    /// Evenly spaced grid `0, spacing, 2 spacing, ...` up to Nyquist.
    pub fn uniform(omega_s: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(omega_s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need positive sampling frequency and spacing, got {omega_s} and {spacing}"
            )));
        }
        let nyq = omega_s / 2.0;
        let n = (nyq / spacing + 1e-9).floor() as usize;
        Self::new(omega_s, (0..=n).map(|i| i as f64 * spacing).collect())
    }

    pub fn nyquist(&self) -> f64 {
        self.omega_s / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_s > 0.0) || !self.omega_s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sampling frequency must be positive, got {}",
                self.omega_s
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("frequency grid is empty".into()));
        }
        let nyq = self.nyquist();
        for w in self.grid.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidParameter("frequency grid must ascend".into()));
            }
        }
        if self.grid.iter().any(|&w| !(0.0..=nyq).contains(&w)) {
            return Err(Error::InvalidParameter(format!(
                "frequency grid must lie in [0, {nyq}]"
            )));
        }
        Ok(())
    }

    /// Grid points inside `[lo, hi]`.
    pub fn points_in(&self, band: &BandSpec) -> Vec<f64> {
        self.grid
            .iter()
            .copied()
            .filter(|&w| w >= band.lo && w <= band.hi)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        let band = Self {
            name: name.into(),
            lo,
            hi,
        };
        if !(0.0 <= lo && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "band {} needs 0 <= lo < hi, got [{lo}, {hi}]",
                band.name
            )));
        }
        Ok(band)
    }

    pub fn validate(&self, omega_s: f64) -> Result<()> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= omega_s / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "band {} [{}, {}] is outside [0, {}]",
                self.name,
                self.lo,
                self.hi,
                omega_s / 2.0
            )));
        }
        Ok(())
    }
}

/// `name:lo-hi`, e.g. `gamma:20-40`.
impl FromStr for BandSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("band '{s}' is not of the form name:lo-hi"));
        let (name, range) = s.split_once(':').ok_or_else(bad)?;
        let (lo, hi) = range.split_once('-').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        Self::new(name.trim(), lo, hi)
    }
}

impl fmt::Display for BandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}", self.name, self.lo, self.hi)
    }
}

#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub phi_omega: DMatrix<C64>,
    pub h: DMatrix<C64>,
    pub s: DMatrix<C64>,
    pub g: DMatrix<C64>,
    pub gamma_mat: DMatrix<C64>,
    /// Largest 1-norm condition number of `Phi(t, w)` and `S`.
    pub condition: f64,
    pub unstable: bool,
}

/// `I - sum_l Phi_l exp(-i 2 pi l w / ws)`.
pub fn fourier_param_matrix(phi: &ParamMatrix, omega: f64, omega_s: f64) -> DMatrix<C64> {
    let p = phi.p();
    let mut out = DMatrix::<C64>::identity(p, p);
    for l in 1..=phi.k() {
        let angle = -2.0 * std::f64::consts::PI * l as f64 * omega / omega_s;
        let z = Complex::from_polar(1.0, angle);
        let block = phi.lag(l);
        for j in 0..p {
            for i in 0..p {
                out[(i, j)] -= z * block[(i, j)];
            }
        }
    }
    out
}

fn norm1(a: &DMatrix<C64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn inverse_with_condition(a: &DMatrix<C64>, what: &str) -> Result<(DMatrix<C64>, f64)> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is not invertible")))?;
    let cond = norm1(a) * norm1(&inv);
    if !cond.is_finite() {
        return Err(Error::Singular(format!("{what} is not invertible")));
    }
    Ok((inv, cond))
}

/// Full spectral frame at one frequency. Exactly singular matrices are an
/// error; ill-conditioned ones come back with `unstable` set.
pub fn spectral_frame(
    phi: &ParamMatrix,
    sigma_e: &DMatrix<f64>,
    omega: f64,
    omega_s: f64,
) -> Result<SpectralFrame> {
    let p = phi.p();
    if sigma_e.nrows() != p || sigma_e.ncols() != p {
        return Err(Error::Dimension(format!(
            "innovation covariance must be {p}x{p}"
        )));
    }
    let phi_omega = fourier_param_matrix(phi, omega, omega_s);
    let (h, cond_phi) = inverse_with_condition(&phi_omega, "frequency-domain coefficient matrix")?;
    let sigma_c = sigma_e.map(|v| Complex::new(v, 0.0));
    let mut s = &h * sigma_c * h.adjoint();
    s = (&s + s.adjoint()) * Complex::new(0.5, 0.0);
    let (g, cond_s) = inverse_with_condition(&s, "spectral matrix")?;
    let g = (&g + g.adjoint()) * Complex::new(0.5, 0.0);
    let d: Vec<f64> = (0..p).map(|i| 1.0 / g[(i, i)].re.abs().sqrt()).collect();
    let gamma_mat = DMatrix::from_fn(p, p, |i, j| g[(i, j)] * (d[i] * d[j]));
    let condition = cond_phi.max(cond_s);
    Ok(SpectralFrame {
        phi_omega,
        h,
        s,
        g,
        gamma_mat,
        condition,
        unstable: condition > CONDITION_LIMIT,
    })
}

/// Squared coherence `|S_ij|^2 / (S_ii S_jj)`.
pub fn coherence(frame: &SpectralFrame) -> Result<DMatrix<f64>> {
    let s = &frame.s;
    let p = s.nrows();
    let diag: Vec<f64> = (0..p).map(|i| s[(i, i)].re).collect();
    if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Singular(format!("auto-spectrum of channel {i} is zero")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (s[(i, j)].norm_sqr() / (diag[i] * diag[j])).min(1.0)
        }
    }))
}

/// `|Gamma_ij|`.
pub fn partial_coherence(frame: &SpectralFrame) -> DMatrix<f64> {
    frame.gamma_mat.map(|z| z.norm().min(1.0))
}

/// `|Gamma_ij|^2`.
pub fn partial_coherence_squared(frame: &SpectralFrame) -> DMatrix<f64> {
    frame.gamma_mat.map(|z| z.norm_sqr().min(1.0))
}

/// Column-normalised magnitudes of `Phi(t, w)`.
pub fn pdc(phi_omega: &DMatrix<C64>) -> Result<DMatrix<f64>> {
    let p = phi_omega.nrows();
    let mut out = phi_omega.map(|z| z.norm());
    for j in 0..p {
        let norm = out.column(j).norm();
        if !(norm > 0.0) {
            return Err(Error::Singular(format!("column {j} of the coefficient matrix is zero")));
        }
        out.column_mut(j).unscale_mut(norm);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialCoherenceScale {
    #[default]
    Magnitude,
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityFrame {
    pub t: usize,
    pub band: BandSpec,
    pub coherence: DMatrix<f64>,
    pub partial_coherence: DMatrix<f64>,
    pub pdc: DMatrix<f64>,
    /// Grid points averaged over.
    pub points: usize,
    /// Grid points skipped because the frame was flagged unstable.
    pub unstable_points: usize,
}

impl ConnectivityFrame {
    pub fn is_unstable(&self) -> bool {
        self.unstable_points > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Coherence,
    PartialCoherence,
    Pdc,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Coherence, Measure::PartialCoherence, Measure::Pdc];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Coherence => "coherence",
            Measure::PartialCoherence => "partial_coherence",
            Measure::Pdc => "pdc",
        }
    }

    pub fn is_directed(self) -> bool {
        matches!(self, Measure::Pdc)
    }

    pub fn select(self, frame: &ConnectivityFrame) -> &DMatrix<f64> {
        match self {
            Measure::Coherence => &frame.coherence,
            Measure::PartialCoherence => &frame.partial_coherence,
            Measure::Pdc => &frame.pdc,
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coherence" => Ok(Measure::Coherence),
            "partial_coherence" | "partial-coherence" => Ok(Measure::PartialCoherence),
            "pdc" => Ok(Measure::Pdc),
            other => Err(Error::Config(format!("unknown measure '{other}'"))),
        }
    }
}

/// Band-averaged coherence, partial coherence and PDC for one coefficient
/// matrix. Measures are averaged uniformly over the stable grid points in
/// the band; if every point is unstable the matrices are NaN.
pub fn band_connectivity(
    phi: &ParamMatrix,
    sigma_e: &DMatrix<f64>,
    band: &BandSpec,
    freq: &FreqSpec,
) -> Result<ConnectivityFrame> {
    band_connectivity_scaled(phi, sigma_e, band, freq, PartialCoherenceScale::Magnitude)
}

pub fn band_connectivity_scaled(
    phi: &ParamMatrix,
    sigma_e: &DMatrix<f64>,
    band: &BandSpec,
    freq: &FreqSpec,
    scale: PartialCoherenceScale,
) -> Result<ConnectivityFrame> {
    band.validate(freq.omega_s)?;
    let points = freq.points_in(band);
    if points.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no grid frequency falls inside band {band}"
        )));
    }
    let p = phi.p();
    let mut coh = DMatrix::zeros(p, p);
    let mut pcoh = DMatrix::zeros(p, p);
    let mut dir = DMatrix::zeros(p, p);
    let mut used = 0usize;
    for &w in &points {
        let frame = match spectral_frame(phi, sigma_e, w, freq.omega_s) {
            Ok(f) if !f.unstable => f,
            Ok(_) | Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        };
        let c = match coherence(&frame) {
            Ok(c) => c,
            Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        };
        coh += c;
        pcoh += match scale {
            PartialCoherenceScale::Magnitude => partial_coherence(&frame),
            PartialCoherenceScale::Squared => partial_coherence_squared(&frame),
        };
        dir += pdc(&frame.phi_omega)?;
        used += 1;
    }
    let n = used as f64;
    let avg = |m: DMatrix<f64>| if used == 0 { m.map(|_| f64::NAN) } else { m / n };
    Ok(ConnectivityFrame {
        t: 0,
        band: band.clone(),
        coherence: avg(coh),
        partial_coherence: avg(pcoh),
        pdc: avg(dir),
        points: points.len(),
        unstable_points: points.len() - used,
    })
}

/// Connectivity for every `(t, Phi(t))` and band, evaluated in parallel.
/// Output is ordered by time, then band.
pub fn connectivity_series(
    estimates: &[(usize, ParamMatrix)],
    sigma_e: &DMatrix<f64>,
    bands: &[BandSpec],
    freq: &FreqSpec,
) -> Result<Vec<ConnectivityFrame>> {
    let nb = bands.len();
    par::map_indices(estimates.len() * nb, |idx| {
        let (t, phi) = &estimates[idx / nb];
        band_connectivity(phi, sigma_e, &bands[idx % nb], freq).map(|mut f| {
            f.t = *t;
            f
        })
    })
    .into_iter()
    .collect()
}
