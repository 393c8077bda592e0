//! Dense complex linear algebra used by the designs.
//!
//! Matrices are `nalgebra` dense matrices over `Complex64`. The Hermitian
//! eigensolver is the textbook two-stage QR algorithm: Householder
//! reduction to real symmetric tridiagonal form followed by implicit
//! Wilkinson-shifted QR sweeps. The power method only extracts the
//! dominant pair, which is all the sum-rate design needs.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::complex_gaussian;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Elementwise asymmetry tolerance for Hermitian inputs, scaled by the
/// largest entry magnitude when that exceeds one.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Upper bound on the condition estimate accepted by [`solve_linear`].
pub const MAX_CONDITION: f64 = 1e12;

const DEFLATION_TOL: f64 = 1e-14;

/// Full eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Unit-norm eigenvectors stored as columns, matching `values`.
    pub vectors: CMatrix,
    /// Number of implicit QR sweeps performed.
    pub sweeps: usize,
}

/// Dominant eigenpair returned by [`power_method`].
#[derive(Debug, Clone)]
pub struct PowerResult {
    /// Real part of the Rayleigh quotient of `vector`.
    pub value: f64,
    pub vector: CVector,
    pub iterations: usize,
    /// False when the iteration cap was hit before the residual test passed.
    pub converged: bool,
}

pub fn max_abs(x: &CMatrix) -> f64 {
    x.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Largest elementwise deviation `|x_ij - conj(x_ji)|`.
pub fn hermitian_asymmetry(x: &CMatrix) -> f64 {
    let n = x.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((x[(i, j)] - x[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(x: &CMatrix) -> bool {
    x.is_square() && hermitian_asymmetry(x) <= HERMITIAN_TOL * max_abs(x).max(1.0)
}

/// Rotates `v` so its largest-magnitude entry is real and positive.
pub fn normalize_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (k, z) in v.iter().enumerate() {
        // strict comparison keeps the first of several equal-magnitude entries
        if z.norm() > best_mag * (1.0 + 1e-12) {
            best = k;
            best_mag = z.norm();
        }
    }
    if best_mag > 0.0 {
        let phase = v[best].conj() / best_mag;
        v.iter_mut().for_each(|z| *z *= phase);
    }
}

/// Eigendecomposition of a Hermitian matrix by the QR algorithm.
///
/// `n_q` caps the number of implicit QR sweeps per eigenvalue; the iteration
/// exits early once every off-diagonal of the tridiagonal form is negligible.
pub fn hermitian_evd(x: &CMatrix, n_q: usize) -> Result<EigenResult> {
    if !x.is_square() {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if n_q == 0 {
        return Err(Error::InvalidArgument("n_q must be at least 1".into()));
    }
    let asymmetry = hermitian_asymmetry(x);
    if asymmetry > HERMITIAN_TOL * max_abs(x).max(1.0) {
        return Err(Error::NotHermitian { asymmetry });
    }
    let n = x.nrows();
    if n == 0 {
        return Ok(EigenResult { values: vec![], vectors: CMatrix::zeros(0, 0), sweeps: 0 });
    }

    let sym = (x + x.adjoint()).scale(0.5);
    let (mut t, mut q) = tridiagonalize(sym);
    let sweeps = tridiagonal_qr(&mut t, &mut q, n_q * n, x.norm())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t[(b, b)].total_cmp(&t[(a, a)]));
    let values = order.iter().map(|&k| t[(k, k)]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v: CVector = q.column(src).into_owned();
        let norm = v.norm();
        v.unscale_mut(norm);
        normalize_phase(&mut v);
        vectors.set_column(dst, &v);
    }
    Ok(EigenResult { values, vectors, sweeps })
}

/// Householder reduction `X = Q T Q^H` with `T` real symmetric tridiagonal.
fn tridiagonalize(mut a: CMatrix) -> (DMatrix<f64>, CMatrix) {
    let n = a.nrows();
    let mut q = CMatrix::identity(n, n);
    for k in 0..n.saturating_sub(2) {
        let mut v: CVector = a.view((k + 1, k), (n - k - 1, 1)).column(0).into_owned();
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let phase = if v[0].norm() > 0.0 { v[0] / v[0].norm() } else { Complex64::new(1.0, 0.0) };
        v[0] += phase * norm;
        let vnorm = v.norm();
        v.unscale_mut(vnorm);
        reflect_rows(&mut a, k + 1, &v);
        reflect_cols(&mut a, k + 1, &v);
        reflect_cols(&mut q, k + 1, &v);
    }

    // diagonal unitary similarity makes the sub-diagonal real and non-negative
    let mut t = DMatrix::<f64>::zeros(n, n);
    let mut phase = Complex64::new(1.0, 0.0);
    for k in 0..n {
        t[(k, k)] = a[(k, k)].re;
        if k > 0 {
            let off = a[(k, k - 1)];
            let mag = off.norm();
            if mag > 0.0 {
                phase *= off / mag;
            }
            t[(k, k - 1)] = mag;
            t[(k - 1, k)] = mag;
            let mut col = q.column_mut(k);
            col *= phase;
        }
    }
    (t, q)
}

/// `M[off.., :] <- (I - 2 v v^H) M[off.., :]`
fn reflect_rows(m: &mut CMatrix, off: usize, v: &CVector) {
    for j in 0..m.ncols() {
        let dot: Complex64 = (0..v.len()).map(|i| v[i].conj() * m[(off + i, j)]).sum();
        for i in 0..v.len() {
            m[(off + i, j)] -= v[i] * dot * 2.0;
        }
    }
}

/// `M[:, off..] <- M[:, off..] (I - 2 v v^H)`
fn reflect_cols(m: &mut CMatrix, off: usize, v: &CVector) {
    for i in 0..m.nrows() {
        let dot: Complex64 = (0..v.len()).map(|j| m[(i, off + j)] * v[j]).sum();
        for j in 0..v.len() {
            m[(i, off + j)] -= dot * v[j].conj() * 2.0;
        }
    }
}

/// Implicit symmetric QR with Wilkinson shifts on a dense-stored tridiagonal
/// matrix, accumulating the rotations into `q`.
fn tridiagonal_qr(t: &mut DMatrix<f64>, q: &mut CMatrix, max_sweeps: usize, scale: f64) -> Result<usize> {
    let n = t.nrows();
    let floor = f64::EPSILON * scale;
    let mut sweeps = 0;
    let mut hi = n - 1;
    while hi > 0 {
        for i in 0..hi {
            let off = t[(i + 1, i)].abs();
            if off <= DEFLATION_TOL * (t[(i, i)].abs() + t[(i + 1, i + 1)].abs()) || off <= floor {
                t[(i + 1, i)] = 0.0;
                t[(i, i + 1)] = 0.0;
            }
        }
        while hi > 0 && t[(hi, hi - 1)] == 0.0 {
            hi -= 1;
        }
        if hi == 0 {
            break;
        }
        let mut lo = hi - 1;
        while lo > 0 && t[(lo, lo - 1)] != 0.0 {
            lo -= 1;
        }
        if sweeps >= max_sweeps {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;

        let a = t[(hi - 1, hi - 1)];
        let b = t[(hi, hi - 1)];
        let c = t[(hi, hi)];
        let delta = 0.5 * (a - c);
        let sign = if delta >= 0.0 { 1.0 } else { -1.0 };
        let shift = c - b * b / (delta + sign * delta.hypot(b));

        let mut x = t[(lo, lo)] - shift;
        let mut z = t[(lo + 1, lo)];
        for k in lo..hi {
            let r = x.hypot(z);
            let (cs, sn) = if r == 0.0 { (1.0, 0.0) } else { (x / r, -z / r) };
            rotate(t, q, k, cs, sn);
            if k + 1 < hi {
                x = t[(k + 1, k)];
                z = t[(k + 2, k)];
            }
        }
    }
    Ok(sweeps)
}

/// `T <- G^T T G`, `Q <- Q G` for the plane rotation on indices `k, k+1`.
fn rotate(t: &mut DMatrix<f64>, q: &mut CMatrix, k: usize, c: f64, s: f64) {
    let n = t.nrows();
    for j in 0..n {
        let (p, r) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = c * p - s * r;
        t[(k + 1, j)] = s * p + c * r;
    }
    for i in 0..n {
        let (p, r) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = c * p - s * r;
        t[(i, k + 1)] = s * p + c * r;
    }
    for i in 0..q.nrows() {
        let (p, r) = (q[(i, k)], q[(i, k + 1)]);
        q[(i, k)] = p * c - r * s;
        q[(i, k + 1)] = p * s + r * c;
    }
}

/// Dominant eigenpair by power iteration from a seeded random start.
///
/// Stops once `||Xv - rho v|| <= 1e-13 ||X||_F` or after `n_p` iterations;
/// in the latter case `converged` is false and a warning is logged.
pub fn power_method(x: &CMatrix, n_p: usize, seed: u64) -> Result<PowerResult> {
    if !x.is_square() {
        return Err(Error::Shape(format!("power method needs a square matrix, got {}x{}", x.nrows(), x.ncols())));
    }
    if n_p == 0 {
        return Err(Error::InvalidArgument("n_p must be at least 1".into()));
    }
    let n = x.nrows();
    let scale = x.norm();
    if n == 0 || scale == 0.0 {
        return Err(Error::Degenerate("power method on a zero matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = CVector::from_fn(n, |_, _| complex_gaussian(&mut rng, 1.0));
    v.unscale_mut(v.norm());
    if (x * &v).norm() == 0.0 {
        // start vector landed in the null space; restart from the largest column
        let best = (0..n)
            .max_by(|&a, &b| x.column(a).norm().total_cmp(&x.column(b).norm()))
            .unwrap_or(0);
        v = x.column(best).into_owned();
        v.unscale_mut(v.norm());
    }

    let tol = 1e-13 * scale;
    let mut rho = Complex64::new(0.0, 0.0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < n_p {
        iterations += 1;
        let y = x * &v;
        let ny = y.norm();
        if ny == 0.0 {
            return Err(Error::Degenerate("power iterate collapsed to zero".into()));
        }
        v = y.unscale(ny);
        let xv = x * &v;
        rho = v.dotc(&xv);
        if (xv - v.scale(1.0) * rho).norm() <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("power method hit its {n_p}-iteration cap before converging");
    }
    normalize_phase(&mut v);
    Ok(PowerResult { value: rho.re, vector: v, iterations, converged })
}

fn norm1(x: &CMatrix) -> f64 {
    x.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves `X sol = B` through an LU factorisation; rejects singular or
/// ill-conditioned systems (1-norm condition estimate above 1e12).
pub fn solve_linear(x: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if !x.is_square() || x.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "cannot solve {}x{} system against {}x{} right-hand side",
            x.nrows(),
            x.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Ok(b.clone());
    }
    let lu = x.clone().lu();
    let inverse = lu.try_inverse().ok_or(Error::Singular { step: "linear solve", condition: f64::INFINITY })?;
    let condition = norm1(x) * norm1(&inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::Singular { step: "linear solve", condition });
    }
    lu.solve(b).ok_or(Error::Singular { step: "linear solve", condition })
}

pub fn solve_linear_vec(x: &CMatrix, b: &CVector) -> Result<CVector> {
    let sol = solve_linear(x, &CMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(sol.column(0).into_owned())
}

/// Elementwise (Hadamard) product.
pub fn hadamard(x: &CMatrix, y: &CMatrix) -> Result<CMatrix> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("Hadamard product of {:?} and {:?}", x.shape(), y.shape())));
    }
    Ok(x.component_mul(y))
}

/// Lower Cholesky factor `L` with `X = L L^H`, for Hermitian positive-definite `X`.
pub fn cholesky_lower(x: &CMatrix) -> Result<CMatrix> {
    Cholesky::new(x.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Degenerate("matrix is not positive definite".into()))
}

/// Hermitian part `(X + X^H) / 2`.
pub fn hermitian_part(x: &CMatrix) -> CMatrix {
    (x + x.adjoint()).scale(0.5)
}
