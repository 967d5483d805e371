//! Feedback synthesis that balances control performance against the number
//! of correctable sensor attacks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::conditions::{max_correctable, q_cap, support_profile, t_bound, SupportProfile, TBoundReport};
use crate::error::{Error, Result};
use crate::linalg::{self, controllability_matrix, RANK_RTOL};
use crate::model::stack_observability;
use crate::rng::rng_from;
use crate::scalar::Real;

/// Seed of the eigenvector targets used by [`place_poles`].
pub const PLACEMENT_SEED: u64 = 0x5eed;

/// Maximum Riccati iterations before giving up.
pub const RICCATI_MAX_ITERS: usize = 100_000;

/// Infinite-horizon discrete LQR gain in the `u = G x` convention
/// (`G = -(R + B^T P B)^{-1} B^T P A`), by fixed-point iteration of the Riccati
/// recursion until successive iterates differ by at most `tol` (relative).
pub fn lqr_gain<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    tol: f64,
) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch("LQR weights do not match the plant".into()));
    }
    let tol = T::tol(tol);
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let k = s
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(&bt_p * a)))
            .or_else(|| s.clone().lu().solve(&(&bt_p * a)))
            .ok_or(Error::SingularInnovation)?;
        let next = q + a.transpose() * &p * a - a.transpose() * &bt_p.transpose() * &k;
        let next = (&next + next.transpose()) * T::lit(0.5);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiDivergence(RICCATI_MAX_ITERS));
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= tol * (T::one() + p.amax()) {
            let bt_p = b.transpose() * &p;
            let s = r + &bt_p * b;
            let k = s.lu().solve(&(&bt_p * a)).ok_or(Error::SingularInnovation)?;
            return Ok(-k);
        }
    }
    Err(Error::RiccatiDivergence(RICCATI_MAX_ITERS))
}

/// Closed-loop quadratic cost `trace(P)` with `P = Q + G^T R G + A_c^T P A_c`,
/// or `None` if `A_c = A + B G` is not Schur stable.
pub fn closed_loop_cost<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    g: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Option<T> {
    let ac = a + b * g;
    if linalg::spectral_radius(&ac) >= T::one() {
        return None;
    }
    let base = q + g.transpose() * r * g;
    let mut p = base.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let next = &base + ac.transpose() * &p * &ac;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= T::tol(1e-12) * (T::one() + p.amax()) {
            return Some(p.trace());
        }
    }
    None
}

fn check_controllable<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<()> {
    let n = a.nrows();
    let rank = linalg::rank(&controllability_matrix(a, b), RANK_RTOL);
    if rank < n {
        return Err(Error::UncontrollablePair { rank, n });
    }
    Ok(())
}

/// Eigenstructure assignment: returns `G` with `eig(A_o + B G) = desired`.
///
/// For every pole the pair `(v, w)` is taken from the null space of
/// `[lambda I - A_o, -B]`, as the projection of a dense target drawn from a
/// fixed-seed Gaussian stream, one per pole. Dense targets make eigenvectors
/// excite every state; distinct targets keep identical decoupled channels from
/// receiving proportional eigenvector blocks. A pole
/// that is already a simple eigenvalue of `A_o` keeps its open-loop
/// eigenvector with `w = 0`. Then `G = W V^{-1}`.
pub fn place_poles<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, desired: &[T]) -> Result<DMatrix<T>> {
    place_poles_guided(a, b, desired, None)
}

/// [`place_poles`] with explicit targets: column `i` of `guide`, a stacked
/// `(v; w)` of length `n + m`, steers the eigenvector of pole `i`.
pub fn place_poles_guided<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    desired: &[T],
    guide: Option<&DMatrix<T>>,
) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || desired.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "need {n} poles for a {n}-state plant, got {}",
            desired.len()
        )));
    }
    if guide.is_some_and(|g| g.shape() != (n + m, n)) {
        return Err(Error::DimensionMismatch(format!("guide must be {}x{n}", n + m)));
    }
    let scale = desired.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    for i in 0..n {
        if !desired[i].is_finite() {
            return Err(Error::InvalidInput("poles must be finite".into()));
        }
        for j in 0..i {
            if (desired[i] - desired[j]).abs() <= T::lit(1e-12) * scale {
                return Err(Error::InvalidInput("desired poles must be distinct".into()));
            }
        }
    }
    check_controllable(a, b)?;

    let open = linalg::eigen(a)?;
    let eig_tol = T::lit(1e-10) * a.norm().max(T::one());
    let mut v = DMatrix::<T>::zeros(n, n);
    let mut w = DMatrix::<T>::zeros(m, n);
    let mut rng = rng_from(PLACEMENT_SEED);

    for (i, &lam) in desired.iter().enumerate() {
        let random = DVector::<T>::from_fn(n + m, |_, _| T::lit(rng.sample(StandardNormal)));
        let target = guide.map(|g| g.column(i).into_owned()).unwrap_or(random);
        let matches: Vec<_> = open
            .iter()
            .filter(|e| e.is_real() && (e.value.re - lam).abs() <= eig_tol)
            .collect();
        if matches.len() == 1 {
            v.set_column(i, &matches[0].re);
            continue;
        }
        let mut mat = DMatrix::<T>::zeros(n, n + m);
        mat.view_mut((0, 0), (n, n))
            .copy_from(&(DMatrix::<T>::identity(n, n) * lam - a));
        mat.view_mut((0, n), (n, m)).copy_from(&(-b));
        let ns = linalg::null_space(&mat, RANK_RTOL);
        if ns.ncols() == 0 {
            return Err(Error::UncontrollablePair { rank: n - 1, n });
        }
        let mut z = &ns * (ns.transpose() * &target);
        if z.rows(0, n).norm() <= T::lit(1e-8) {
            z = ns.column(0).into_owned();
        }
        let nv = z.rows(0, n).norm();
        z /= nv;
        v.set_column(i, &z.rows(0, n));
        w.set_column(i, &z.rows(n, m));
    }

    let cond = linalg::condition_number(&v);
    if cond.as_f64() > 1e10 || !cond.is_finite() {
        return Err(Error::IllConditionedAssignment { cond: cond.as_f64() });
    }
    let vinv = v
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::IllConditionedAssignment { cond: f64::INFINITY })?;
    Ok(w * vinv)
}

/// Flags for the five design requirements, in order: nonzero full-rank `C`;
/// distinct positive closed-loop poles; observable `(A, C)`; a window bound
/// exists for `q_max`; every eigenvector excites all `p` outputs.
pub type DesignConditions = [bool; 5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport<T: Real> {
    #[serde(serialize_with = "ser_matrix")]
    pub gain: DMatrix<T>,
    #[serde(serialize_with = "ser_vec")]
    pub closed_poles: Vec<T>,
    #[serde(serialize_with = "ser_vec")]
    pub requested_poles: Vec<T>,
    pub supports: Vec<usize>,
    pub q_max: usize,
    pub t_bound: Option<TBoundReport>,
    pub conditions_met: DesignConditions,
    /// Sum of `|requested - base|` over poles.
    pub total_shift: f64,
    /// Closed-loop cost `trace(P)` for unit state and input weights; informational.
    pub control_cost: Option<f64>,
    #[serde(skip)]
    pub support_profile: SupportProfile<T>,
}

fn ser_matrix<T: Real, S: serde::Serializer>(m: &DMatrix<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&linalg::matrix_to_rows(m), s)
}

fn ser_vec<T: Real, S: serde::Serializer>(v: &[T], s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&v.iter().map(|x| x.as_f64()).collect::<Vec<_>>(), s)
}

/// Evaluates a gain against the design requirements.
pub fn design_report<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    gain: DMatrix<T>,
    requested: &[T],
    base: &[T],
) -> Result<DesignReport<T>> {
    let n = a.nrows();
    let p = c.nrows();
    let ac = a + b * &gain;
    let profile = support_profile(&ac, c)?;
    let q_max = max_correctable(&profile, p);
    let bound = t_bound(&profile, p, q_max).ok();
    let c_ok = (0..p).all(|i| c.row(i).iter().any(|x| *x != T::zero())) && linalg::rank(c, RANK_RTOL) == p.min(n);
    let observable = stack_observability(&ac, c, n)
        .map(|phi| linalg::rank(&phi, RANK_RTOL) == n)
        .unwrap_or(false);
    let conditions_met = [
        c_ok,
        profile.distinct_positive,
        observable,
        bound.is_some(),
        profile.min_support() == p,
    ];
    let total_shift = requested.iter().zip(base).map(|(r, b)| (*r - *b).abs().as_f64()).sum();
    let control_cost = closed_loop_cost(
        a,
        b,
        &gain,
        &DMatrix::identity(n, n),
        &DMatrix::identity(b.ncols(), b.ncols()),
    )
    .map(|v| v.as_f64());
    let mut sorted = requested.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(DesignReport {
        gain,
        closed_poles: profile.eigvals.clone(),
        requested_poles: sorted,
        supports: profile.s.clone(),
        q_max,
        t_bound: bound,
        conditions_met,
        total_shift,
        control_cost,
        support_profile: profile,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    pub max_iters: usize,
    /// Smallest allowed distance between two poles.
    pub min_gap: f64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            min_gap: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DesignError<T: Real> {
    #[error(transparent)]
    Core(#[from] Error),
    /// The search could not raise the smallest eigenvector support above the
    /// base design; carries the base report.
    #[error("no pole perturbation improved the eigenvector supports (min support {})", .best.support_profile.min_support())]
    NoImprovement { best: Box<DesignReport<T>> },
}

type Score = (usize, usize, f64);

fn score<T: Real>(r: &DesignReport<T>) -> Score {
    (r.support_profile.min_support(), r.supports.iter().sum(), -r.total_shift)
}

fn better(a: &Score, b: &Score) -> bool {
    (a.0, a.1) > (b.0, b.1) || ((a.0, a.1) == (b.0, b.1) && a.2 > b.2 + 1e-15)
}

/// Coordinate-wise hill climbing over pole shifts within `max_shift` of the
/// base poles, maximizing the smallest eigenvector support (then the total
/// support, then preferring smaller shifts). Poles stay in `(0, 1)` and at
/// least `min_gap` apart. The step starts at `max_shift / 4` and halves
/// whenever no move improves.
pub fn perturb_for_security<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    base_poles: &[T],
    max_shift: f64,
    opts: PerturbOptions,
) -> std::result::Result<DesignReport<T>, DesignError<T>> {
    perturb_for_security_guided(a, b, c, base_poles, None, max_shift, opts)
}

/// [`perturb_for_security`] with eigenvector targets attached to the base
/// poles (see [`place_poles_guided`]); targets follow their pole as it moves.
pub fn perturb_for_security_guided<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    base_poles: &[T],
    guide: Option<&DMatrix<T>>,
    max_shift: f64,
    opts: PerturbOptions,
) -> std::result::Result<DesignReport<T>, DesignError<T>> {
    if max_shift <= 0.0 {
        return Err(Error::InvalidInput("max_shift must be positive".into()).into());
    }
    let p = c.nrows();
    let mut order: Vec<usize> = (0..base_poles.len()).collect();
    order.sort_by(|&i, &j| {
        base_poles[i]
            .partial_cmp(&base_poles[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let base: Vec<T> = order.iter().map(|&i| base_poles[i]).collect();
    let guide = match guide {
        Some(g) if g.ncols() != base.len() => {
            return Err(Error::DimensionMismatch("one guide column per pole".into()).into());
        }
        Some(g) => Some(DMatrix::from_columns(
            &order.iter().map(|&i| g.column(i)).collect::<Vec<_>>(),
        )),
        None => None,
    };
    let place = |poles: &[T]| place_poles_guided(a, b, poles, guide.as_ref());
    let evaluate = |poles: &[T]| -> Option<DesignReport<T>> {
        let g = place(poles).ok()?;
        design_report(a, b, c, g, poles, &base).ok()
    };
    let base_report = match evaluate(&base) {
        Some(r) => r,
        None => {
            return Err(DesignError::Core(
                place(&base).err().unwrap_or(Error::Eigen("base design failed".into())),
            ))
        }
    };
    if base_report.support_profile.min_support() == p {
        return Ok(base_report);
    }

    let gap = T::lit(opts.min_gap);
    let limit = T::lit(max_shift);
    let feasible = |poles: &[T], i: usize| {
        let v = poles[i];
        v > T::zero()
            && v < T::one()
            && (v - base[i]).abs() <= limit * T::lit(1.0 + 1e-12)
            && poles.iter().enumerate().all(|(j, &u)| j == i || (u - v).abs() >= gap)
    };

    let mut current = base.clone();
    let mut best = base_report.clone();
    let mut best_score = score(&best);
    let mut step = max_shift / 4.0;
    for _ in 0..opts.max_iters {
        if best.support_profile.min_support() == p || step < max_shift * 1e-6 {
            break;
        }
        let mut round_best: Option<(Vec<T>, DesignReport<T>, Score)> = None;
        for i in 0..current.len() {
            for dir in [-1.0, 1.0] {
                let mut cand = current.clone();
                cand[i] += T::lit(dir * step);
                if !feasible(&cand, i) {
                    continue;
                }
                if let Some(rep) = evaluate(&cand) {
                    let sc = score(&rep);
                    let beats_round = round_best.as_ref().is_none_or(|(_, _, s)| better(&sc, s));
                    if better(&sc, &best_score) && beats_round {
                        round_best = Some((cand, rep, sc));
                    }
                }
            }
        }
        match round_best {
            Some((cand, rep, sc)) => {
                current = cand;
                best = rep;
                best_score = sc;
            }
            None => step /= 2.0,
        }
    }
    if best.support_profile.min_support() <= base_report.support_profile.min_support()
        && best.supports.iter().sum::<usize>() <= base_report.supports.iter().sum::<usize>()
    {
        return Err(DesignError::NoImprovement {
            best: Box::new(base_report),
        });
    }
    Ok(best)
}

/// Real, distinct base poles and eigenvector targets taken from a stabilizing
/// gain `G`: eigenvalue moduli (real and imaginary parts of a complex pair's
/// eigenvector split across its two poles), with coincident values pushed
/// apart by `spread` and the set kept below 1. Targets are `(v; G v)`.
pub fn modal_guide<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    g: &DMatrix<T>,
    spread: f64,
) -> Result<(Vec<T>, DMatrix<T>)> {
    let n = a.nrows();
    let closed = a + b * g;
    let pairs = linalg::eigen(&closed)?;
    let mut modes: Vec<(T, DVector<T>)> = pairs
        .iter()
        .map(|e| {
            let v = if e.is_real() || e.value.im > T::zero() {
                e.re.clone()
            } else {
                e.im.clone()
            };
            ((e.value.re * e.value.re + e.value.im * e.value.im).sqrt(), v)
        })
        .collect();
    modes.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
    let spread = T::lit(spread);
    let mut poles: Vec<T> = modes.iter().map(|m| m.0).collect();
    for i in 1..poles.len() {
        if poles[i] - poles[i - 1] < spread {
            poles[i] = poles[i - 1] + spread;
        }
    }
    if let Some(&top) = poles.last() {
        let ceiling = T::one() - spread;
        if top >= ceiling {
            let shift = top - ceiling;
            for p in &mut poles {
                *p -= shift;
            }
        }
    }
    let mut guide = DMatrix::<T>::zeros(n + b.ncols(), n);
    for (i, (_, v)) in modes.iter().enumerate() {
        let w = g * v;
        guide.view_mut((0, i), (n, 1)).copy_from(v);
        guide.view_mut((n, i), (b.ncols(), 1)).copy_from(&w);
    }
    Ok((poles, guide))
}

/// `q_max` a design can reach at best with `p` outputs.
pub fn best_possible_q(p: usize) -> usize {
    q_cap(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_riccati() {
        let g = lqr_gain(&dmatrix![0.5], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0], 1e-14).unwrap();
        let p: f64 = (0.25 + 4.0625_f64.sqrt()) / 2.0;
        let expect = -(p * 0.5) / (1.0 + p);
        assert!((g[(0, 0)] - expect).abs() < 1e-8);
        assert!((0.5 + g[(0, 0)]).abs() < 0.5);
    }

    #[test]
    fn expensive_control() {
        let g = lqr_gain(
            &(DMatrix::<f64>::identity(2, 2) * 0.9),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &(DMatrix::identity(2, 2) * 1e8),
            1e-12,
        )
        .unwrap();
        assert!(g.amax() < 1e-6);
    }

    #[test]
    fn double_integrator_stable() {
        let a = dmatrix![1.0, 0.1; 0.0, 1.0];
        let b = dmatrix![0.005; 0.1];
        let g = lqr_gain(&a, &b, &DMatrix::identity(2, 2), &dmatrix![1.0], 1e-12).unwrap();
        assert!(linalg::spectral_radius(&(&a + &b * &g)) < 1.0_f64);
    }

    #[test]
    fn diagonal_plant_keeps_zero_gain() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.5, 0.7]));
        let g: DMatrix<f64> = place_poles(&a, &DMatrix::identity(3, 3), &[0.2, 0.5, 0.7]).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn uncontrollable_rejected() {
        let a = dmatrix![0.5_f64, 0.0; 0.0, 0.6];
        let b = dmatrix![1.0; 0.0];
        assert!(matches!(
            place_poles(&a, &b, &[0.1, 0.2]),
            Err(Error::UncontrollablePair { rank: 1, n: 2 })
        ));
    }
}
