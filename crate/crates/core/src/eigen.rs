//! Dense eigensolvers for the small matrices produced by the estimators.
//!
//! General (non-Hermitian) complex matrices go through a Householder
//! reduction to upper Hessenberg form followed by single-shift QR sweeps
//! with Wilkinson shifts. The resulting Schur form `A = Z T Z†` also yields
//! right and left eigenvectors by triangular back substitution.
//!
//! Hermitian, real-symmetric and singular value problems are delegated to
//! faer.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Iteration budget per eigenvalue before the QR sweep is declared stuck.
const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

/// Eigenvalues with optional right and left eigenvectors.
///
/// `right.column(j)` satisfies `A v = λ_j v` and `left.row(j)` satisfies
/// `w A = λ_j w`. Both are scaled to unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<C64>,
    pub right: DMatrix<C64>,
    pub left: DMatrix<C64>,
}

/// Complex Schur factorisation `A = Z T Z†` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct Schur {
    pub z: DMatrix<C64>,
    pub t: DMatrix<C64>,
}

impl Schur {
    pub fn new(a: &DMatrix<C64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "eigenproblem needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Consistency(
                "matrix handed to the eigensolver contains non-finite entries".into(),
            ));
        }
        let (mut h, mut z) = hessenberg(a);
        shifted_qr(&mut h, &mut z).map_err(|iterations| Error::NoConvergence {
            iterations,
            dim: a.nrows(),
            dump: format!("{a:.6e}"),
        })?;
        Ok(Self { z, t: h })
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        self.t.diagonal().iter().copied().collect()
    }
}

/// All eigenvalues of a general complex matrix, in Schur-diagonal order.
pub fn eigenvalues(a: &DMatrix<C64>) -> Result<Vec<C64>> {
    Ok(Schur::new(a)?.eigenvalues())
}

/// Eigenvalues together with unit-norm right and left eigenvectors.
pub fn eig_with_vectors(a: &DMatrix<C64>) -> Result<EigenDecomposition> {
    let schur = Schur::new(a)?;
    let n = a.nrows();
    let t = &schur.t;
    let values = schur.eigenvalues();
    let tnorm = t.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let smallnum = (tnorm * f64::EPSILON).max(f64::MIN_POSITIVE);

    let mut right_t = DMatrix::<C64>::zeros(n, n);
    let mut left_t = DMatrix::<C64>::zeros(n, n);
    for j in 0..n {
        let lambda = values[j];

        // (T - λ I) y = 0 with y_j = 1, y_i = 0 for i > j.
        right_t[(j, j)] = ONE;
        for i in (0..j).rev() {
            let mut acc = ZERO;
            for m in (i + 1)..=j {
                acc += t[(i, m)] * right_t[(m, j)];
            }
            right_t[(i, j)] = -acc / guarded(t[(i, i)] - lambda, smallnum);
        }

        // x (T - λ I) = 0 with x_j = 1, x_i = 0 for i < j.
        left_t[(j, j)] = ONE;
        for i in (j + 1)..n {
            let mut acc = ZERO;
            for m in j..i {
                acc += left_t[(j, m)] * t[(m, i)];
            }
            left_t[(j, i)] = -acc / guarded(t[(i, i)] - lambda, smallnum);
        }
    }

    let mut right = &schur.z * right_t;
    let mut left = left_t * schur.z.adjoint();
    for j in 0..n {
        let rn = right.column(j).norm();
        if rn > 0.0 {
            right.column_mut(j).unscale_mut(rn);
        }
        let ln = left.row(j).norm();
        if ln > 0.0 {
            left.row_mut(j).unscale_mut(ln);
        }
    }
    Ok(EigenDecomposition { values, right, left })
}

fn guarded(d: C64, smallnum: f64) -> C64 {
    if d.norm() < smallnum {
        C64::new(smallnum, 0.0)
    } else {
        d
    }
}

/// Householder reduction `A = Q H Q†`; returns `(H, Q)`.
fn hessenberg(a: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let n = a.nrows();
    let mut h = a.clone();
    let mut q = DMatrix::<C64>::identity(n, n);
    if n < 3 {
        return (h, q);
    }
    for k in 0..n - 2 {
        let mut v: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let alpha = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let x0 = v[0];
        let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
        v[0] += phase * alpha;
        let vnorm2: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;

        // H <- (I - β v v†) H
        for j in 0..n {
            let mut dot = ZERO;
            for (idx, vi) in v.iter().enumerate() {
                dot += vi.conj() * h[(k + 1 + idx, j)];
            }
            dot *= beta;
            for (idx, vi) in v.iter().enumerate() {
                h[(k + 1 + idx, j)] -= vi * dot;
            }
        }
        // H <- H (I - β v v†), Q <- Q (I - β v v†)
        for mat in [&mut h, &mut q] {
            for i in 0..n {
                let mut dot = ZERO;
                for (idx, vi) in v.iter().enumerate() {
                    dot += mat[(i, k + 1 + idx)] * vi;
                }
                dot *= beta;
                for (idx, vi) in v.iter().enumerate() {
                    mat[(i, k + 1 + idx)] -= dot * vi.conj();
                }
            }
        }
        for i in (k + 2)..n {
            h[(i, k)] = ZERO;
        }
    }
    (h, q)
}

/// Givens rotation `G = [[c, s], [-s̄, c]]` with `G [a; b] = [r; 0]`.
#[derive(Clone, Copy)]
struct Givens {
    c: f64,
    s: C64,
}

impl Givens {
    fn zeroing(a: C64, b: C64) -> Self {
        let an = a.norm();
        let bn = b.norm();
        if bn == 0.0 {
            return Self { c: 1.0, s: ZERO };
        }
        if an == 0.0 {
            return Self {
                c: 0.0,
                s: b.conj() / bn,
            };
        }
        let r = an.hypot(bn);
        Self {
            c: an / r,
            s: (a / an) * b.conj() / r,
        }
    }

    fn rotate_rows(&self, m: &mut DMatrix<C64>, k: usize, cols: std::ops::Range<usize>) {
        for j in cols {
            let x = m[(k, j)];
            let y = m[(k + 1, j)];
            m[(k, j)] = x * self.c + self.s * y;
            m[(k + 1, j)] = -self.s.conj() * x + y * self.c;
        }
    }

    /// Right multiplication by `G†` on columns `k, k+1`.
    fn rotate_cols(&self, m: &mut DMatrix<C64>, k: usize, rows: std::ops::Range<usize>) {
        for i in rows {
            let x = m[(i, k)];
            let y = m[(i, k + 1)];
            m[(i, k)] = x * self.c + y * self.s.conj();
            m[(i, k + 1)] = -x * self.s + y * self.c;
        }
    }
}

/// Reduce the Hessenberg matrix `h` to upper triangular form in place,
/// accumulating the unitary similarity into `z`. On failure returns the
/// number of sweeps spent.
fn shifted_qr(h: &mut DMatrix<C64>, z: &mut DMatrix<C64>) -> std::result::Result<(), usize> {
    let n = h.nrows();
    if n <= 1 {
        return Ok(());
    }
    let budget = MAX_SWEEPS_PER_EIGENVALUE * n;
    let mut total = 0usize;
    let mut since_deflation = 0usize;
    let mut hi = n - 1;
    let hnorm = h.iter().map(|v| v.norm()).fold(0.0, f64::max);

    while hi > 0 {
        // locate the top of the trailing unreduced block
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let mut diag = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            if diag == 0.0 {
                diag = hnorm;
            }
            if sub <= f64::EPSILON * diag || sub <= f64::MIN_POSITIVE {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            since_deflation = 0;
            continue;
        }

        total += 1;
        since_deflation += 1;
        if total > budget {
            return Err(total);
        }

        let mu = if since_deflation.is_multiple_of(11) {
            // exceptional shift to break cycles
            h[(hi, hi)] + C64::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };

        for i in lo..=hi {
            h[(i, i)] -= mu;
        }
        let mut rotations = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let g = Givens::zeroing(h[(k, k)], h[(k + 1, k)]);
            g.rotate_rows(h, k, k..n);
            h[(k + 1, k)] = ZERO;
            rotations.push(g);
        }
        for (offset, g) in rotations.iter().enumerate() {
            let k = lo + offset;
            g.rotate_cols(h, k, 0..(k + 2).min(hi + 1));
            g.rotate_cols(z, k, 0..n);
        }
        for i in lo..=hi {
            h[(i, i)] += mu;
        }
    }

    for j in 0..n {
        for i in (j + 1)..n {
            h[(i, j)] = ZERO;
        }
    }
    Ok(())
}

/// Eigenvalue of `[[a, b], [c, d]]` closest to `d`.
fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half_tr = (a + d) * 0.5;
    let half_diff = (a - d) * 0.5;
    let disc = (half_diff * half_diff + b * c).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

fn evd_error(dim: usize, e: faer::linalg::evd::EvdError) -> Error {
    Error::NoConvergence {
        iterations: 0,
        dim,
        dump: format!("self-adjoint eigensolver failed: {e:?}"),
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending. Only
/// the lower triangle is read.
pub fn hermitian_eigen(a: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let n = a.nrows();
    let mat = faer::Mat::<C64>::from_fn(n, a.ncols(), |i, j| a[(i, j)]);
    let eig = mat.self_adjoint_eigen(faer::Side::Lower).map_err(|e| evd_error(n, e))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    Ok(sort_eigenpairs(values, DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Real-symmetric eigendecomposition with eigenvalues sorted ascending.
/// Only the lower triangle is read.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let mat = faer::Mat::<f64>::from_fn(n, a.ncols(), |i, j| a[(i, j)]);
    let eig = mat.self_adjoint_eigen(faer::Side::Lower).map_err(|e| evd_error(n, e))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
    Ok(sort_eigenpairs(values, DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
}

fn sort_eigenpairs<T: nalgebra::Scalar + Copy>(values: Vec<f64>, vectors: DMatrix<T>) -> (Vec<f64>, DMatrix<T>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let sorted_vectors = DMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    (sorted_values, sorted_vectors)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<C64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let mat = faer::Mat::<C64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    match mat.singular_values() {
        Ok(values) => values.into_iter().fold(0.0, f64::max),
        Err(_) => f64::NAN,
    }
}
