use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use secest::l1solve::{
    basis_pursuit, basis_pursuit_fit, l1_regression, l1_regression_fit, solve_lp, Bound, LpProblem, LpStatus,
    SimplexSolver,
};
use secest::model::ObservabilityCode;
use secest::rng::rng_from;

fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimum over all basic feasible solutions of `min c^T x, A x = b, x >= 0`.
fn vertex_oracle(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let (m, n) = a.shape();
    let mut best = f64::INFINITY;
    for cols in combinations(n, m) {
        let bmat = DMatrix::from_fn(m, m, |i, j| a[(i, cols[j])]);
        let Some(xb) = bmat.clone().lu().solve(b) else { continue };
        if (&bmat * &xb - b).amax() > 1e-9 || xb.iter().any(|v| *v < -1e-10) {
            continue;
        }
        let obj: f64 = cols.iter().zip(xb.iter()).map(|(&j, v)| c[j] * v).sum();
        best = best.min(obj);
    }
    best
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = rng_from(2024);
    for _ in 0..25 {
        let (m, n) = (5, 20);
        let a = gaussian(&mut rng, m, n);
        let xf = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
        let b = &a * xf;
        let y = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
        let s = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
        let c = a.transpose() * y + s;
        let expect = vertex_oracle(&c, &a, &b);
        let lp = LpProblem::new(c, a, b, vec![Bound::NonNegative; n]).unwrap();
        let sol = solve_lp(&lp, 1e-8, 0);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(
            (sol.objective - expect).abs() <= 1e-8 * (1.0 + expect.abs()),
            "{} vs {expect}",
            sol.objective
        );
        assert!((&lp.eq_matrix * &sol.x - &lp.eq_rhs).amax() <= 1e-8);
        assert!(sol.x.iter().all(|v| *v >= -1e-8));
    }
}

#[test]
fn basis_pursuit_recovers_one_sparse() {
    // l1 recovery of a planted 1-sparse vector is exact unless some other
    // feasible point has a strictly smaller l1 norm, a property of f alone.
    let mut rng = rng_from(7);
    let mut recovered = 0;
    for _ in 0..40 {
        let f = gaussian(&mut rng, 4, 12);
        let mut e = DVector::zeros(12);
        e[rng.random_range(0..12)] = rng.sample::<f64, _>(StandardNormal) * 5.0;
        let y = &f * &e;
        let got = basis_pursuit(&f, &y).unwrap();
        assert!((&f * &got - &y).amax() <= 1e-8 * (1.0 + y.amax()));
        if (&got - &e).amax() <= 1e-6 {
            recovered += 1;
        } else {
            assert!(got.lp_norm(1) < e.lp_norm(1) - 1e-9);
        }
    }
    assert!(recovered >= 30, "{recovered}/40");
}

#[test]
fn degenerate_problem_terminates() {
    // Many ties in the ratio test: every rhs is zero.
    let mut rng = rng_from(3);
    let a = gaussian(&mut rng, 6, 14);
    let lp = LpProblem::new(
        DVector::from_fn(14, |_, _| rng.random_range(0.1..1.0)),
        a,
        DVector::zeros(6),
        vec![Bound::NonNegative; 14],
    )
    .unwrap();
    let sol = solve_lp(&lp, 1e-8, 0);
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!(sol.objective.abs() < 1e-12);
}

fn l1(v: &DVector<f64>) -> f64 {
    v.lp_norm(1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regression_is_locally_optimal(seed in any::<u64>(), rows in 4usize..14, n in 1usize..4) {
        let mut rng = rng_from(seed);
        let phi = gaussian(&mut rng, rows, n);
        let y = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = l1_regression(&phi, &y).unwrap();
        let base = l1(&(&y - &phi * &x));
        for j in 0..n {
            for d in [-1e-3, 1e-3] {
                let mut xp = x.clone();
                xp[j] += d;
                prop_assert!(l1(&(&y - &phi * &xp)) >= base - 1e-9);
            }
        }
    }

    #[test]
    fn basis_pursuit_is_locally_optimal(seed in any::<u64>(), r in 2usize..6, extra in 1usize..8) {
        let mut rng = rng_from(seed);
        let d = r + extra;
        let f = gaussian(&mut rng, r, d);
        let y = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let e = basis_pursuit(&f, &y).unwrap();
        prop_assert!((&f * &e - &y).amax() <= 1e-8 * (1.0 + y.amax()));
        // Feasible perturbations along the null space of f.
        let ns = secest::linalg::null_space(&f, 1e-9);
        for k in 0..ns.ncols() {
            for s in [-1e-3, 1e-3] {
                let ep = &e + ns.column(k) * s;
                prop_assert!(l1(&ep) >= l1(&e) - 1e-9);
            }
        }
    }

    #[test]
    fn decoders_agree_when_unique(seed in any::<u64>(), n in 1usize..4, p in 2usize..5, window in 2usize..4) {
        let mut rng = rng_from(seed);
        let rows = p * window;
        prop_assume!(rows > n);
        let phi = gaussian(&mut rng, rows, n);
        let code = ObservabilityCode::from_matrix(phi.clone(), window).unwrap();
        let y = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut solver = SimplexSolver::default();
        let bp = basis_pursuit_fit(&mut solver, &code.q2().transpose(), &code.annihilate(&y)).unwrap();
        let reg = l1_regression_fit(&mut solver, &phi, &y).unwrap();
        prop_assume!(bp.unique && reg.unique);
        let x_bp = code.solve_state(&(&y - &bp.solution)).unwrap();
        prop_assert!((x_bp - reg.solution).amax() <= 1e-6);
        prop_assert!((bp.objective - reg.objective).abs() <= 1e-6 * (1.0 + reg.objective));
    }

    #[test]
    fn basis_pursuit_scale_equivariant(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let mut rng = rng_from(seed);
        let f = gaussian(&mut rng, 4, 10);
        let y = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut solver = SimplexSolver::default();
        let a = basis_pursuit_fit(&mut solver, &f, &y).unwrap();
        prop_assume!(a.unique);
        let b = basis_pursuit_fit(&mut solver, &f, &(&y * alpha)).unwrap();
        prop_assert!((b.solution - a.solution * alpha).amax() <= 1e-7 * alpha.max(1.0));
    }
}
