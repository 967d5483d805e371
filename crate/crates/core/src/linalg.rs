//! Dense linear algebra helpers built on `nalgebra`.
//!
//! The observability code needs the *full* orthogonal factor of a tall
//! matrix (its trailing columns annihilate the range), which `nalgebra`'s QR
//! only exposes in thin form, so the Householder factorization lives here.
//! Eigenvectors of non-symmetric matrices are recovered as null vectors of
//! `A - lambda I` once the Schur form has produced the spectrum.

use nalgebra::{Complex, DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative singular-value threshold below which a direction counts as null.
pub const RANK_RTOL: f64 = 1e-9;

/// Full Householder QR factorization `a = q * r`.
#[derive(Debug, Clone)]
pub struct HouseholderQr<T: Real> {
    /// Orthogonal `m x m` factor.
    pub q: DMatrix<T>,
    /// Upper-trapezoidal `m x n` factor.
    pub r: DMatrix<T>,
}

pub fn householder_qr<T: Real>(a: &DMatrix<T>) -> HouseholderQr<T> {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut q = DMatrix::<T>::identity(m, m);
    let two = T::lit(2.0);

    for k in 0..n.min(m) {
        let mut v: DVector<T> = r.view((k, k), (m - k, 1)).column(0).into_owned();
        let norm = v.norm();
        if norm == T::zero() {
            continue;
        }
        let alpha = if v[0] >= T::zero() { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == T::zero() {
            continue;
        }
        v /= vnorm;

        // R[k.., k..] -= 2 v (v^T R[k.., k..])
        let mut block = r.view_mut((k, k), (m - k, n - k));
        let proj = v.transpose() * &block;
        block -= (&v * proj) * two;

        // Q[:, k..] -= 2 (Q[:, k..] v) v^T
        let mut qblock = q.view_mut((0, k), (m, m - k));
        let qv = &qblock * &v;
        qblock -= (qv * v.transpose()) * two;
    }

    for j in 0..n {
        for i in (j + 1)..m {
            r[(i, j)] = T::zero();
        }
    }
    HouseholderQr { q, r }
}

pub fn singular_values<T: Real>(a: &DMatrix<T>) -> DVector<T> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(0);
    }
    a.clone().singular_values()
}

/// Numerical rank with singular values below `rtol * sigma_max` treated as zero.
pub fn rank<T: Real>(a: &DMatrix<T>, rtol: f64) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(T::zero(), |acc, s| acc.max(s));
    if smax == T::zero() {
        return 0;
    }
    let cut = smax * T::tol(rtol);
    sv.iter().filter(|&&s| s > cut).count()
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space<T: Real>(a: &DMatrix<T>, rtol: f64) -> DMatrix<T> {
    let (m, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a complete right basis.
    let rows = m.max(n);
    let mut padded = DMatrix::<T>::zeros(rows, n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(T::zero(), |acc, s| acc.max(s));
    let cut = smax * T::tol(rtol);
    let cols: Vec<DVector<T>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == T::zero() || s <= cut)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Right singular vector of the smallest singular value of a square matrix.
fn smallest_right_singular_vector<T: Real>(a: DMatrix<T>) -> DVector<T> {
    let svd = SVD::new(a, false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(
            (0, T::max_value().unwrap()),
            |(bi, bs), (i, &s)| {
                if s < bs {
                    (i, s)
                } else {
                    (bi, bs)
                }
            },
        );
    vt.row(idx).transpose()
}

pub fn condition_number<T: Real>(a: &DMatrix<T>) -> T {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(T::zero(), |acc, s| acc.max(s));
    let smin = sv.iter().copied().fold(smax, |acc, s| acc.min(s));
    if smin == T::zero() {
        T::max_value().unwrap()
    } else {
        smax / smin
    }
}

/// One eigenpair of a real matrix.
///
/// Real eigenvalues carry a real unit eigenvector in `re` (with `im` zero).
/// Complex eigenvalues carry `re + i*im`, normalized so `[re; im]` has unit norm.
#[derive(Debug, Clone)]
pub struct EigenPair<T: Real> {
    pub value: Complex<T>,
    pub re: DVector<T>,
    pub im: DVector<T>,
}

impl<T: Real> EigenPair<T> {
    pub fn is_real(&self) -> bool {
        self.value.im == T::zero()
    }
}

/// Eigen decomposition of a general real square matrix, sorted by real part
/// (then imaginary part).
pub fn eigen<T: Real>(a: &DMatrix<T>) -> Result<Vec<EigenPair<T>>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigen decomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let vals = a.clone().complex_eigenvalues();
    let scale = a.norm().max(T::one());
    let imag_tol = scale * T::tol(1e-10);

    let mut pairs = Vec::with_capacity(n);
    for lam in vals.iter() {
        if !lam.re.is_finite() || !lam.im.is_finite() {
            return Err(Error::Eigen("non-finite eigenvalue".into()));
        }
        if lam.im.abs() <= imag_tol {
            let shifted = a - DMatrix::<T>::identity(n, n) * lam.re;
            let mut v = smallest_right_singular_vector(shifted);
            canonical_sign(&mut v);
            pairs.push(EigenPair {
                value: Complex::new(lam.re, T::zero()),
                re: v,
                im: DVector::zeros(n),
            });
        } else {
            let (ar, ai) = (lam.re, lam.im);
            let mut m = DMatrix::<T>::zeros(2 * n, 2 * n);
            let shifted = a - DMatrix::<T>::identity(n, n) * ar;
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            m.view_mut((n, n), (n, n)).copy_from(&shifted);
            for i in 0..n {
                m[(i, n + i)] = ai;
                m[(n + i, i)] = -ai;
            }
            let z = smallest_right_singular_vector(m);
            let re = z.rows(0, n).into_owned();
            let im = z.rows(n, n).into_owned();
            pairs.push(EigenPair {
                value: Complex::new(ar, ai),
                re,
                im,
            });
        }
    }
    pairs.sort_by(|x, y| {
        x.value
            .re
            .partial_cmp(&y.value.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.value.im.partial_cmp(&y.value.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(pairs)
}

/// Eigenvalues only, sorted by real part.
pub fn eigenvalues<T: Real>(a: &DMatrix<T>) -> Vec<Complex<T>> {
    let mut v: Vec<Complex<T>> = a.clone().complex_eigenvalues().iter().copied().collect();
    v.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    v
}

pub fn spectral_radius<T: Real>(a: &DMatrix<T>) -> T {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .fold(T::zero(), |acc, r| acc.max(r))
}

/// Flip `v` so its largest-magnitude entry is positive.
fn canonical_sign<T: Real>(v: &mut DVector<T>) {
    let mut best = T::zero();
    let mut sign = T::one();
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = if x < T::zero() { -T::one() } else { T::one() };
        }
    }
    *v *= sign;
}

/// Indices whose magnitude exceeds `threshold`.
pub fn support<T: Real>(v: &DVector<T>, threshold: T) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

pub fn mat_pow<T: Real>(a: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let mut out = DMatrix::<T>::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Controllability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::<T>::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

pub fn is_symmetric<T: Real>(a: &DMatrix<T>, rtol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(T::one());
    (a - a.transpose()).amax() <= scale * T::tol(rtol)
}

/// Factor `L` with `L * L^T = a` for a symmetric positive semidefinite `a`.
/// Small negative eigenvalues from round-off are clamped to zero.
pub fn psd_factor<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.iter().all(|x| *x == T::zero()) {
        return DMatrix::zeros(n, n);
    }
    let sym = (a + a.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    l
}

pub fn min_symmetric_eigenvalue<T: Real>(a: &DMatrix<T>) -> T {
    let sym = (a + a.transpose()) * T::lit(0.5);
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |acc, x| acc.min(x))
}

/// Parse a row-major nested array into a matrix (validating raggedness).
pub fn matrix_from_rows<T: Real>(rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j])))
}

pub fn matrix_to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn qr_reconstructs_and_is_orthogonal() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0; 7.0, 9.0];
        let qr = householder_qr(&a);
        assert!((&qr.q * &qr.r - &a).amax() < 1e-12);
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!((qr.q.transpose() * &qr.q - eye).amax() < 1e-12);
        // trailing columns annihilate the range
        let q2 = qr.q.columns(2, 2);
        assert!((q2.transpose() * &a).amax() < 1e-12);
    }

    #[test]
    fn qr_single_precision() {
        let a = dmatrix![1.0_f32, 0.5; 0.0, 1.0; 1.0, 1.0];
        let qr = householder_qr(&a);
        assert!((&qr.q * &qr.r - &a).amax() < 1e-5);
    }

    #[test]
    fn rank_and_null_space() {
        let a = dmatrix![1.0, 0.0; 1.0, 0.0];
        assert_eq!(rank(&a, RANK_RTOL), 1);
        let ns = null_space(&a, RANK_RTOL);
        assert_eq!(ns.ncols(), 1);
        assert!((&a * &ns).amax() < 1e-12);

        let wide = dmatrix![1.0, 1.0, 0.0];
        let ns = null_space(&wide, RANK_RTOL);
        assert_eq!(ns.ncols(), 2);
        assert!((&wide * &ns).amax() < 1e-12);
    }

    #[test]
    fn eigen_real_and_complex() {
        let a = dmatrix![2.0_f64, 0.0; 0.0, 1.0];
        let e = eigen(&a).unwrap();
        assert!((e[0].value.re - 1.0).abs() < 1e-12);
        assert!((e[1].value.re - 2.0).abs() < 1e-12);
        assert!((e[0].re[1].abs() - 1.0).abs() < 1e-12);

        let rot = dmatrix![0.0_f64, -1.0; 1.0, 0.0];
        let e = eigen(&rot).unwrap();
        for pair in &e {
            assert!((pair.value.im.abs() - 1.0).abs() < 1e-12);
            // (A - lambda I)(re + i im) = 0
            let (lr, li) = (pair.value.re, pair.value.im);
            let real_part = &rot * &pair.re - &pair.re * lr + &pair.im * li;
            let imag_part = &rot * &pair.im - &pair.im * lr - &pair.re * li;
            assert!(real_part.amax() < 1e-10 && imag_part.amax() < 1e-10);
        }
    }

    #[test]
    fn psd_factor_reconstructs() {
        let a = dmatrix![4.0, 2.0; 2.0, 3.0];
        let l = psd_factor(&a);
        assert!((&l * l.transpose() - &a).amax() < 1e-12);
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(psd_factor(&z), z);
    }
}
