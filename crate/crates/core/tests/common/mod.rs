//! Independent reference implementations used by the integration and
//! acceptance tests. Each is written the slow, obvious way on purpose and
//! shares no code with the library beyond the data types.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex<f64>;

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random symmetric positive definite matrix with eigenvalues roughly in `[floor, floor + p]`.
pub fn random_spd(rng: &mut impl Rng, p: usize, floor: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, p, p, 1.0);
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * floor
}

pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm().max(f64::MIN_POSITIVE)
}

/// Row-major stacking `a[i*m + j] = phi[(i, j)]`.
fn vec_rows(phi: &DMatrix<f64>) -> DVector<f64> {
    let (p, m) = phi.shape();
    DVector::from_fn(p * m, |idx, _| phi[(idx / m, idx % m)])
}

fn unvec_rows(a: &DVector<f64>, p: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, m, |i, j| a[i * m + j])
}

/// `I_P (x) u'`, formed element by element.
pub fn kron_identity_row(u: &DVector<f64>, p: usize) -> DMatrix<f64> {
    let m = u.len();
    let mut c = DMatrix::zeros(p, p * m);
    for i in 0..p {
        for j in 0..m {
            c[(i, i * m + j)] = u[j];
        }
    }
    c
}

/// Penalized least squares over the vectorised coefficients:
/// `min |x - C a|^2 + lambda |a - vec(M)|^2` solved through the full normal
/// equations with an explicit inverse.
pub fn dense_penalized_ls(
    prev: &DMatrix<f64>,
    prev2: &DMatrix<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    beta: f64,
) -> DMatrix<f64> {
    let (p, m) = prev.shape();
    let centre = prev * (1.0 + beta) - prev2 * beta;
    let c = kron_identity_row(u, p);
    let n = p * m;
    let normal = c.transpose() * &c + DMatrix::identity(n, n) * lambda;
    let rhs = c.transpose() * x + vec_rows(&centre) * lambda;
    let inv = normal.try_inverse().expect("penalized normal equations are invertible");
    unvec_rows(&(inv * rhs), p, m)
}

/// Matrix form `(x u' + lambda M)(u u' + lambda I)^-1` with an explicit
/// `(KP x KP)` inverse.
pub fn dense_matrix_form(
    prev: &DMatrix<f64>,
    prev2: &DMatrix<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    beta: f64,
) -> DMatrix<f64> {
    let m = u.len();
    let centre = prev * (1.0 + beta) - prev2 * beta;
    let gram = u * u.transpose() + DMatrix::identity(m, m) * lambda;
    (x * u.transpose() + centre * lambda) * gram.try_inverse().expect("u u' + lambda I is invertible")
}

/// One textbook Kalman step for the random-walk coefficient model with the
/// observation matrix formed explicitly and the Joseph covariance update.
pub fn dense_kf_step(
    a: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    q_var: f64,
    r: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let p = x.len();
    let n = a.len();
    let c = kron_identity_row(u, p);
    let pred = cov + DMatrix::identity(n, n) * q_var;
    let s = &c * &pred * c.transpose() + r;
    let gain = &pred * c.transpose() * s.try_inverse().expect("innovation covariance is invertible");
    let a_next = a + &gain * (x - &c * a);
    let i_kc = DMatrix::identity(n, n) - &gain * &c;
    let cov_next = &i_kc * pred * i_kc.transpose() + &gain * r * gain.transpose();
    (a_next, cov_next)
}

/// Classical recursive least squares without forgetting, shared gain over
/// the rows of `theta` (`P x KP`).
pub fn rls_step(theta: &mut DMatrix<f64>, pmat: &mut DMatrix<f64>, u: &DVector<f64>, x: &DVector<f64>) {
    let pu = &*pmat * u;
    let denom = 1.0 + u.dot(&pu);
    let gain = &pu / denom;
    let err = x - &*theta * u;
    *theta += &err * gain.transpose();
    *pmat -= &gain * pu.transpose();
}

/// Characteristic polynomial coefficients `[c_0, ..., c_n]` (monic, `c_n = 1`)
/// of a square matrix by the Faddeev-LeVerrier recursion.
pub fn faddeev_leverrier(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = a * &mk + DMatrix::identity(n, n) * coeffs[n - k + 1];
        let amk = a * &mk;
        coeffs[n - k] = -amk.trace() / k as f64;
    }
    coeffs
}

/// All roots of a monic polynomial by Durand-Kerner iteration.
pub fn durand_kerner(coeffs: &[f64]) -> Vec<C64> {
    let n = coeffs.len() - 1;
    let eval = |z: C64| coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let bound = 1.0 + coeffs[..n].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..n).map(|i| seed.powu(i as u32) * bound).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut den = C64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-14 * bound {
            break;
        }
    }
    roots
}

/// Spectral radius of the companion matrix via its characteristic polynomial.
pub fn companion_radius_oracle(entries: &DMatrix<f64>) -> f64 {
    let p = entries.nrows();
    let n = entries.ncols();
    let mut comp = DMatrix::zeros(n, n);
    comp.rows_mut(0, p).copy_from(entries);
    for i in p..n {
        comp[(i, i - p)] = 1.0;
    }
    durand_kerner(&faddeev_leverrier(&comp))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Simulate a constant-coefficient VAR(K) with innovation covariance
/// `sigma`, discarding `burn` initial samples.
pub fn simulate_frozen_var(
    rng: &mut impl Rng,
    entries: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    len: usize,
    burn: usize,
) -> Vec<DVector<f64>> {
    let p = entries.nrows();
    let k = entries.ncols() / p;
    let chol = sigma.clone().cholesky().expect("innovation covariance is SPD").l();
    let mut hist: Vec<DVector<f64>> = vec![DVector::zeros(p); k];
    let mut out = Vec::with_capacity(len);
    for t in 0..len + burn {
        let mut x = &chol * normal_vector(rng, p);
        for l in 1..=k {
            let past = &hist[hist.len() - l];
            x += entries.columns((l - 1) * p, p) * past;
        }
        hist.push(x.clone());
        if hist.len() > k {
            hist.remove(0);
        }
        if t >= burn {
            out.push(x);
        }
    }
    out
}

/// Segment-averaged periodogram `d d* / L` at Fourier index `j` (frequency
/// `j / L` cycles per sample), with the per-entry standard error of the
/// mean across segments for real and imaginary parts.
pub struct Periodogram {
    pub mean: DMatrix<C64>,
    pub se_re: DMatrix<f64>,
    pub se_im: DMatrix<f64>,
}

pub fn periodogram(series: &[DVector<f64>], seg_len: usize, j: usize) -> Periodogram {
    let p = series[0].len();
    let segments = series.len() / seg_len;
    let mut sum = DMatrix::<C64>::zeros(p, p);
    let mut sq_re = DMatrix::<f64>::zeros(p, p);
    let mut sq_im = DMatrix::<f64>::zeros(p, p);
    for s in 0..segments {
        let mut d = DVector::<C64>::zeros(p);
        for (t, x) in series[s * seg_len..(s + 1) * seg_len].iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (j * t) as f64 / seg_len as f64;
            let z = C64::from_polar(1.0, angle);
            for i in 0..p {
                d[i] += z * x[i];
            }
        }
        let per = &d * d.adjoint() / C64::new(seg_len as f64, 0.0);
        sum += &per;
        sq_re += per.map(|z| z.re * z.re);
        sq_im += per.map(|z| z.im * z.im);
    }
    let n = segments as f64;
    let mean = sum / C64::new(n, 0.0);
    let se = |sq: &DMatrix<f64>, m: DMatrix<f64>| {
        DMatrix::from_fn(p, p, |a, b| {
            let var = (sq[(a, b)] / n - m[(a, b)] * m[(a, b)]) * n / (n - 1.0);
            (var.max(0.0) / n).sqrt()
        })
    };
    Periodogram {
        se_re: se(&sq_re, mean.map(|z| z.re)),
        se_im: se(&sq_im, mean.map(|z| z.im)),
        mean,
    }
}

/// Smallest eigenvalue of a Hermitian matrix via its real symmetric embedding.
pub fn hermitian_min_eigenvalue(s: &DMatrix<C64>) -> f64 {
    let p = s.nrows();
    let emb = DMatrix::from_fn(2 * p, 2 * p, |i, j| {
        let z = s[(i % p, j % p)];
        match (i < p, j < p) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let emb = (&emb + emb.transpose()) * 0.5;
    emb.symmetric_eigenvalues().min()
}

/// Rescale lag blocks so the companion spectral radius equals `target`.
pub fn scale_to_radius(entries: &DMatrix<f64>, radius: f64, target: f64) -> DMatrix<f64> {
    let p = entries.nrows();
    let c = target / radius;
    let mut out = entries.clone();
    for l in 0..entries.ncols() / p {
        out.columns_mut(l * p, p).scale_mut(c.powi(l as i32 + 1));
    }
    out
}
