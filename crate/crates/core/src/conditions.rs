//! Recovery-condition checkers: eigenvector support profile, maximum
//! correctable attacks, window-length bound, the column-independence and
//! support conditions on the code, and the generalized Vandermonde and
//! cancellation properties behind the bound.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_RTOL};
use crate::model::ObservabilityCode;
use crate::rng::rng_from;
use crate::scalar::Real;

/// Absolute threshold on entries of `C v` for unit-norm eigenvectors `v`.
pub const EIGVEC_SUPPORT_TOL: f64 = 1e-9;

/// Relative threshold used when counting cancellations.
pub const CANCELLATION_RTOL: f64 = 1e-9;

/// Largest number of subsets tested exhaustively by the column-rank check.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportProfile<T: Real> {
    /// `s[i] = |supp(C v_i)|`.
    pub s: Vec<usize>,
    /// Real parts of the eigenvalues, ascending.
    pub eigvals: Vec<T>,
    pub eigvals_im: Vec<T>,
    /// Unit eigenvectors (real part for complex pairs).
    pub eigvecs: Vec<DVector<T>>,
    /// Eigenvalues are real, positive and pairwise distinct.
    pub distinct_positive: bool,
    pub complex: bool,
    /// Number of outputs `p`.
    pub outputs: usize,
}

impl<T: Real> SupportProfile<T> {
    pub fn min_support(&self) -> usize {
        self.s.iter().copied().min().unwrap_or(0)
    }
}

/// Counts the output rows excited by each eigenvector of `A`.
///
/// For a complex pair the count is the smallest support of `C z` over the
/// real invariant plane `z in span{Re v, Im v}`, shared by both members.
pub fn support_profile<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> Result<SupportProfile<T>> {
    if c.ncols() != a.nrows() {
        return Err(Error::DimensionMismatch("C and A are incompatible".into()));
    }
    let pairs = linalg::eigen(a)?;
    let thr = T::lit(EIGVEC_SUPPORT_TOL);
    let mut s = Vec::with_capacity(pairs.len());
    let mut complex = false;
    for pair in &pairs {
        if pair.is_real() {
            s.push(linalg::support(&(c * &pair.re), thr).len());
        } else {
            complex = true;
            let norm = (pair.re.norm_squared() + pair.im.norm_squared()).sqrt();
            let cr = c * &pair.re / norm;
            let ci = c * &pair.im / norm;
            s.push(plane_min_support(&cr, &ci, thr));
        }
    }
    let eigvals: Vec<T> = pairs.iter().map(|e| e.value.re).collect();
    let gap = T::lit(1e-9) * eigvals.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let distinct_positive =
        !complex && eigvals.iter().all(|v| *v > T::zero()) && eigvals.windows(2).all(|w| w[1] - w[0] > gap);
    Ok(SupportProfile {
        s,
        eigvals,
        eigvals_im: pairs.iter().map(|e| e.value.im).collect(),
        eigvecs: pairs
            .iter()
            .map(|e| {
                let v = e.re.clone();
                let nv = v.norm();
                if nv > T::zero() {
                    v / nv
                } else {
                    v
                }
            })
            .collect(),
        distinct_positive,
        complex,
        outputs: c.nrows(),
    })
}

/// Minimum over nonzero `(a, b)` of `|supp(a x + b y)|`: rows whose 2-vectors
/// `(x_i, y_i)` are parallel vanish together.
fn plane_min_support<T: Real>(x: &DVector<T>, y: &DVector<T>, thr: T) -> usize {
    let rows: Vec<(T, T)> = x
        .iter()
        .zip(y.iter())
        .filter(|(a, b)| (**a * **a + **b * **b).sqrt() > thr)
        .map(|(a, b)| (*a, *b))
        .collect();
    let nnz = rows.len();
    let mut best = 0;
    for &(a, b) in &rows {
        let ni = (a * a + b * b).sqrt();
        let parallel = rows
            .iter()
            .filter(|&&(c, d)| {
                let nj = (c * c + d * d).sqrt();
                (a * d - b * c).abs() <= T::lit(1e-9) * ni * nj
            })
            .count();
        best = best.max(parallel);
    }
    nnz - best
}

/// Largest `q` with `2q < min_i s_i`, capped at `ceil(p/2 - 1)`.
pub fn max_correctable<T: Real>(profile: &SupportProfile<T>, p: usize) -> usize {
    let s_min = profile.min_support();
    let by_support = if s_min == 0 { 0 } else { (s_min - 1) / 2 };
    by_support.min(q_cap(p))
}

/// `ceil(p/2 - 1)`, the most attacks per step any decoder can correct.
pub fn q_cap(p: usize) -> usize {
    if p == 0 {
        0
    } else {
        (p - 1) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TBoundReport {
    /// `(m, T_m)` for `m = 2..=n`.
    pub per_m: Vec<(usize, f64)>,
    pub t_star: f64,
    /// Smallest integer strictly above `t_star`, at least `n`.
    pub t_recommended: usize,
}

/// Window length needed for exact recovery of `q` attacks per step.
///
/// `T_m` is the supremum over `m`-subsets `S` of the supports of
/// `((m-2) p + min S) / (max S - 2q)`. With the supports sorted, the best
/// subset for a given minimum is the contiguous run that starts there,
/// because that run has the smallest possible maximum.
pub fn t_bound<T: Real>(profile: &SupportProfile<T>, p: usize, q: usize) -> Result<TBoundReport> {
    t_bound_from_supports(&profile.s, p, q).inspect(|_| {
        if !profile.distinct_positive {
            log::warn!("window bound computed for a spectrum that is not real, distinct and positive");
        }
    })
}

pub fn t_bound_from_supports(s: &[usize], p: usize, q: usize) -> Result<TBoundReport> {
    let n = s.len();
    let mut sorted = s.to_vec();
    sorted.sort_unstable();
    if n >= 2 && sorted[1] <= 2 * q {
        return Err(Error::BoundUndefined {
            max_support: sorted[1],
            two_q: 2 * q,
        });
    }
    let mut per_m = Vec::new();
    let mut t_star = 0.0_f64;
    for m in 2..=n {
        let mut tm = f64::NEG_INFINITY;
        for i in 0..=n - m {
            let lo = sorted[i] as f64;
            let hi = sorted[i + m - 1] as f64;
            let v = ((m - 2) as f64 * p as f64 + lo) / (hi - 2.0 * q as f64);
            tm = tm.max(v);
        }
        per_m.push((m, tm));
        t_star = t_star.max(tm);
    }
    let t_recommended = ((t_star.floor() as usize) + 1).max(n);
    Ok(TBoundReport {
        per_m,
        t_star,
        t_recommended,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2RankReport {
    /// Every tested set of `2s` columns of `Q2^T` is independent.
    pub holds: bool,
    pub exhaustive: bool,
    pub tested: usize,
    /// A dependent column set, if one was found.
    pub dependent_columns: Option<Vec<usize>>,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / 1024 {
            return u128::MAX;
        }
    }
    acc
}

/// Lexicographic `k`-subsets of `0..n`.
pub struct Combinations {
    idx: Vec<usize>,
    n: usize,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            idx: (0..k).collect(),
            n,
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        while i > 0 && self.idx[i - 1] == self.n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            self.done = true;
        } else {
            self.idx[i - 1] += 1;
            for j in i..k {
                self.idx[j] = self.idx[j - 1] + 1;
            }
        }
        Some(out)
    }
}

fn columns_independent<T: Real>(m: &DMatrix<T>, cols: &[usize], scale: T) -> bool {
    let sub = m.select_columns(cols);
    // Columns of Q2^T have norm at most one, so an absolute cut is meaningful.
    let sv = linalg::singular_values(&sub);
    sv.len() == cols.len() && sv.iter().all(|&x| x > scale * T::lit(RANK_RTOL))
}

/// Exhaustive check that every `2s` columns of `Q2^T` are independent.
/// Fails with `CombinatorialBlowup` when there are more than
/// [`EXHAUSTIVE_LIMIT`] subsets.
pub fn check_prop2_rank<T: Real>(code: &ObservabilityCode<T>, s: usize) -> Result<Prop2RankReport> {
    let total = binomial(code.rows(), 2 * s);
    if total > EXHAUSTIVE_LIMIT {
        return Err(Error::CombinatorialBlowup { subsets: total });
    }
    Ok(rank_check(code, s, None))
}

/// Like [`check_prop2_rank`], but falls back to `samples` random subsets when
/// exhaustive enumeration is too large.
pub fn check_prop2_rank_sampled<T: Real>(
    code: &ObservabilityCode<T>,
    s: usize,
    samples: usize,
    seed: u64,
) -> Prop2RankReport {
    let total = binomial(code.rows(), 2 * s);
    if total > EXHAUSTIVE_LIMIT {
        rank_check(code, s, Some((samples, seed)))
    } else {
        rank_check(code, s, None)
    }
}

fn rank_check<T: Real>(code: &ObservabilityCode<T>, s: usize, sampling: Option<(usize, u64)>) -> Prop2RankReport {
    let q2t = code.q2().transpose();
    let k = 2 * s;
    let d = q2t.ncols();
    if k == 0 {
        return Prop2RankReport {
            holds: true,
            exhaustive: true,
            tested: 0,
            dependent_columns: None,
        };
    }
    if k > q2t.nrows() || k > d {
        return Prop2RankReport {
            holds: false,
            exhaustive: true,
            tested: 0,
            dependent_columns: Some((0..k.min(d)).collect()),
        };
    }
    let scale = T::one();
    let mut tested = 0;
    let mut check = |cols: Vec<usize>| -> Option<Vec<usize>> {
        tested += 1;
        (!columns_independent(&q2t, &cols, scale)).then_some(cols)
    };
    let (found, exhaustive) = match sampling {
        None => (Combinations::new(d, k).find_map(&mut check), true),
        Some((samples, seed)) => {
            let mut rng = rng_from(seed);
            let mut hit = None;
            for _ in 0..samples {
                let mut cols = sample(&mut rng, d, k).into_vec();
                cols.sort_unstable();
                if let Some(c) = check(cols) {
                    hit = Some(c);
                    break;
                }
            }
            (hit, false)
        }
    };
    Prop2RankReport {
        holds: found.is_none(),
        exhaustive,
        tested,
        dependent_columns: found,
    }
}

/// Maps a dependent column set of `Q2^T` to a nonzero state `z` with
/// `supp(Phi z)` inside those columns: the null vector `c` of the selected
/// columns gives `E0` with `Q2^T E0 = 0`, so `E0 = Phi z` for
/// `z = R1^{-1} Q1^T E0`.
pub fn support_witness<T: Real>(code: &ObservabilityCode<T>, cols: &[usize]) -> Option<DVector<T>> {
    let q2t = code.q2().transpose();
    let sub = q2t.select_columns(cols);
    let ns = linalg::null_space(&sub, RANK_RTOL);
    if ns.ncols() == 0 {
        return None;
    }
    let mut e0 = DVector::zeros(code.rows());
    for (k, &j) in cols.iter().enumerate() {
        e0[j] = ns[(k, 0)];
    }
    let z = code.solve_state(&e0).ok()?;
    (z.amax() > T::zero()).then_some(z)
}

/// `|supp(Phi z)|` with a threshold relative to the largest entry.
pub fn image_support<T: Real>(code: &ObservabilityCode<T>, z: &DVector<T>) -> usize {
    let img = code.phi() * z;
    let thr = T::lit(1e-9) * img.amax().max(T::lit(1e-300));
    linalg::support(&img, thr).len()
}

/// One-sided test of `|supp(Phi z)| > 2s` for all nonzero `z`: samples
/// directions from the unit sphere plus the coordinate axes and returns
/// `false` on the first witness.
pub fn check_prop2_support<T: Real>(code: &ObservabilityCode<T>, s: usize, n_samples: usize, seed: u64) -> bool {
    check_prop2_support_with(code, s, n_samples, seed, &[])
}

/// As [`check_prop2_support`], also probing the given directions (for
/// instance the eigenvectors of `A`).
pub fn check_prop2_support_with<T: Real>(
    code: &ObservabilityCode<T>,
    s: usize,
    n_samples: usize,
    seed: u64,
    directions: &[DVector<T>],
) -> bool {
    let n = code.n();
    let violates = |z: &DVector<T>| z.amax() > T::zero() && image_support(code, z) <= 2 * s;
    if directions.iter().any(violates) {
        return false;
    }
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = T::one();
        if violates(&e) {
            return false;
        }
    }
    let mut rng = rng_from(seed);
    for _ in 0..n_samples {
        let z = DVector::from_fn(n, |_, _| {
            let v: f64 = rng.sample(StandardNormal);
            T::lit(v)
        });
        if violates(&z) {
            return false;
        }
    }
    true
}

/// Nonsingularity of `GV[i][j] = lambda_j^{x_i}` for ascending positive
/// `lambda` and ascending exponents. After row and column equilibration,
/// `|det|` is compared with `1e-12` times the product of the largest singular
/// value and the `m - 1` leading ones, which is `sigma_min / sigma_max > 1e-12`.
pub fn gv_nonsingular<T: Real>(lambdas: &[T], exps: &[u32]) -> Result<bool> {
    if lambdas.len() != exps.len() {
        return Err(Error::DimensionMismatch(
            "lambda and exponent lists differ in length".into(),
        ));
    }
    if lambdas.iter().any(|l| *l <= T::zero()) || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::OrderingViolation(
            "lambdas must be positive and strictly ascending".into(),
        ));
    }
    if exps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::OrderingViolation("exponents must be strictly ascending".into()));
    }
    let m = lambdas.len();
    if m == 0 {
        return Ok(true);
    }
    let mut gv = generalized_vandermonde(lambdas, exps);
    for i in 0..m {
        let r = gv.row(i).amax();
        if r > T::zero() {
            gv.row_mut(i).scale_mut(T::one() / r);
        }
    }
    for j in 0..m {
        let c = gv.column(j).amax();
        if c > T::zero() {
            gv.column_mut(j).scale_mut(T::one() / c);
        }
    }
    let sv = linalg::singular_values(&gv);
    let (hi, lo) = (sv.max(), sv.min());
    Ok(hi > T::zero() && lo > T::lit(1e-12) * hi)
}

pub fn generalized_vandermonde<T: Real>(lambdas: &[T], exps: &[u32]) -> DMatrix<T> {
    DMatrix::from_fn(exps.len(), lambdas.len(), |i, j| lambdas[j].powi(exps[i] as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationReport {
    /// Cancellations per output row over the window.
    pub per_row: Vec<usize>,
    /// `(row, step)` of every cancellation.
    pub events: Vec<(usize, usize)>,
    /// Number of active eigen-components.
    pub active: usize,
}

/// Counts, for `x0 = sum_j alpha_j v_j`, the steps `k < window` at which output
/// row `i` vanishes although at least two active components reach it.
pub fn count_cancellations<T: Real>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    alpha: &DVector<T>,
    window: usize,
) -> Result<CancellationReport> {
    let pairs = linalg::eigen(a)?;
    if pairs.iter().any(|e| !e.is_real()) {
        return Err(Error::InvalidInput(
            "cancellation counting needs a real spectrum".into(),
        ));
    }
    if alpha.len() != pairs.len() {
        return Err(Error::DimensionMismatch(
            "alpha must have one entry per eigenvalue".into(),
        ));
    }
    let lambdas: Vec<T> = pairs.iter().map(|e| e.value.re).collect();
    let cv = DMatrix::from_fn(c.nrows(), pairs.len(), |i, j| c.row(i).transpose().dot(&pairs[j].re));
    Ok(count_cancellations_modal(&lambdas, &cv, alpha, window))
}

/// Same count from the modal data directly: `cv[(i, j)] = c_i^T v_j`.
pub fn count_cancellations_modal<T: Real>(
    lambdas: &[T],
    cv: &DMatrix<T>,
    alpha: &DVector<T>,
    window: usize,
) -> CancellationReport {
    let (p, n) = cv.shape();
    let thr = T::lit(EIGVEC_SUPPORT_TOL);
    let active: Vec<usize> = (0..n).filter(|&j| alpha[j] != T::zero()).collect();
    let mut per_row = vec![0; p];
    let mut events = Vec::new();
    for i in 0..p {
        let contrib: Vec<usize> = active.iter().copied().filter(|&j| cv[(i, j)].abs() > thr).collect();
        if contrib.len() < 2 {
            continue;
        }
        for k in 0..window {
            let mut sum = T::zero();
            let mut mag = T::zero();
            for &j in &contrib {
                let term = alpha[j] * lambdas[j].powi(k as i32) * cv[(i, j)];
                sum += term;
                mag += term.abs();
            }
            if sum.abs() <= T::lit(CANCELLATION_RTOL) * mag {
                per_row[i] += 1;
                events.push((i, k));
            }
        }
    }
    CancellationReport {
        per_row,
        events,
        active: active.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn axis_eigenvectors() {
        let p = support_profile(&dmatrix![1.0, 0.0; 0.0, 2.0], &DMatrix::<f64>::identity(2, 2)).unwrap();
        assert_eq!(p.s, vec![1, 1]);
        assert!(p.distinct_positive);
    }

    #[test]
    fn mixed_outputs() {
        let p = support_profile(&dmatrix![1.0, 0.0; 0.0, 2.0], &dmatrix![1.0, 1.0; 1.0, -1.0]).unwrap();
        assert_eq!(p.s, vec![2, 2]);
    }

    #[test]
    fn complex_pair_plane_support() {
        let rot = dmatrix![0.5, -0.5; 0.5, 0.5];
        let p = support_profile(&rot, &dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(p.complex && !p.distinct_positive);
        // Any direction in the plane zeroes at most one of the three rows.
        assert_eq!(p.s, vec![2, 2]);
    }

    #[test]
    fn q_max_examples() {
        let mk = |s: Vec<usize>| SupportProfile::<f64> {
            eigvals: vec![0.0; s.len()],
            eigvals_im: vec![0.0; s.len()],
            eigvecs: vec![],
            distinct_positive: true,
            complex: false,
            outputs: 0,
            s,
        };
        assert_eq!(max_correctable(&mk(vec![10; 8]), 10), 4);
        assert_eq!(max_correctable(&mk(vec![1, 5, 5]), 5), 0);
        assert_eq!(max_correctable(&mk(vec![5; 4]), 5), 2);
        assert_eq!(max_correctable(&mk(vec![0, 5]), 5), 0);
    }

    #[test]
    fn bound_examples() {
        let r = t_bound_from_supports(&[10; 8], 10, 4).unwrap();
        assert_eq!(r.t_star, 35.0);
        assert_eq!(r.t_recommended, 36);
        let r = t_bound_from_supports(&[6, 6], 6, 1).unwrap();
        assert_eq!(r.t_star, 1.5);
        assert_eq!(r.t_recommended, 2);
        assert!(matches!(
            t_bound_from_supports(&[2, 2, 5], 5, 1),
            Err(Error::BoundUndefined {
                max_support: 2,
                two_q: 2
            })
        ));
    }

    #[test]
    fn gv_examples() {
        assert!(gv_nonsingular(&[1.0, 2.0], &[1, 2]).unwrap());
        assert!((generalized_vandermonde(&[1.0, 2.0], &[1, 2]).determinant() - 2.0_f64).abs() < 1e-12);
        assert!(gv_nonsingular(&[1.0, 2.0, 3.0], &[0, 1, 2]).unwrap());
        assert!((generalized_vandermonde(&[1.0, 2.0, 3.0], &[0, 1, 2]).determinant() - 2.0_f64).abs() < 1e-12);
        assert!(gv_nonsingular(&[0.5, 1.5, 2.5, 3.5], &[1, 3, 4, 7]).unwrap());
        assert!(matches!(
            gv_nonsingular(&[2.0, 1.0], &[0, 1]),
            Err(Error::OrderingViolation(_))
        ));
        assert!(matches!(
            gv_nonsingular(&[1.0, 2.0], &[1, 1]),
            Err(Error::OrderingViolation(_))
        ));
    }

    #[test]
    fn combinations_count() {
        assert_eq!(Combinations::new(6, 2).count(), 15);
        assert_eq!(Combinations::new(4, 0).count(), 1);
        assert_eq!(binomial(80, 8), 28_987_537_150);
    }
}
