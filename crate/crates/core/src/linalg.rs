//! Dense linear-algebra helpers shared by the model-based oracles and the
//! data-driven routines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Rank tolerance `max(m, n) * sigma_max * 1e-12`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * 1e-12
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().cloned().fold(0.0, f64::max)
}

/// Moore-Penrose pseudo-inverse with the crate-wide rank tolerance.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if m.is_empty() {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(r, c, smax);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Orthonormal basis of the null space (columns).
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 {
        return DMatrix::identity(c, c);
    }
    // Pad to a square matrix so the SVD returns a full V.
    let mut sq = DMatrix::zeros(r.max(c), c);
    sq.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(r, c, smax);
    let idx: Vec<usize> = (0..c)
        .filter(|&k| smax == 0.0 || svd.singular_values[k] <= tol)
        .collect();
    let mut out = DMatrix::zeros(c, idx.len());
    for (j, &k) in idx.iter().enumerate() {
        out.set_column(j, &vt.row(k).transpose());
    }
    out
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Spectral radius via the complex eigenvalues of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `P = A'PA - (A'PB + S)(R + B'PB)^{-1}(B'PA + S') + Q`
/// via the structure-preserving doubling algorithm.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("R must be invertible".into()))?;
    // Remove the cross term: A <- A - B R^{-1} S', Q <- Q - S R^{-1} S'.
    let (mut ak, mut hk) = match s {
        Some(s) => (a - b * &r_inv * s.transpose(), q - s * &r_inv * s.transpose()),
        None => (a.clone(), q.clone()),
    };
    hk = symmetrize(&hk);
    let mut gk = symmetrize(&(b * &r_inv * b.transpose()));
    let eye = DMatrix::<f64>::identity(n, n);
    const MAX_ITER: usize = 100;
    for _ in 0..MAX_ITER {
        let w = (&eye + &gk * &hk)
            .lu()
            .try_inverse()
            .ok_or(Error::RiccatiNotConverged(0))?;
        let wa = &w * &ak;
        let a_next = &ak * &wa;
        let g_next = symmetrize(&(&gk + &ak * &w * &gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &wa));
        let diff = (&h_next - &hk).norm();
        let scale = h_next.norm().max(1.0);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !hk.iter().all(|v| v.is_finite()) {
            break;
        }
        if diff <= 1e-13 * scale {
            return Ok(hk);
        }
    }
    Err(Error::RiccatiNotConverged(MAX_ITER))
}

/// LQR gain `K` (with `u = K x`) from the DARE solution.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let lhs = r + b.transpose() * p * b;
    let mut rhs = b.transpose() * p * a;
    if let Some(s) = s {
        rhs += s.transpose();
    }
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::RankDeficient("R + B'PB is singular".into()))?;
    Ok(-sol)
}

/// Solution of the discrete Lyapunov equation `P = A'PA + W` (A Schur stable),
/// computed with Smith doubling.
pub fn solve_dlyap(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if spectral_radius(a) >= 1.0 {
        return Err(Error::InvalidArgument("Lyapunov equation needs a Schur-stable matrix".into()));
    }
    let mut p = w.clone();
    let mut ak = a.clone();
    for _ in 0..100 {
        let inc = ak.transpose() * &p * &ak;
        p += &inc;
        ak = &ak * &ak;
        if inc.norm() <= 1e-15 * p.norm() {
            return Ok(symmetrize(&p));
        }
    }
    Err(Error::NumericalFailure("Lyapunov doubling did not converge".into()))
}

/// Infinity norm of a vector (0 for empty vectors).
pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
