use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use secest::conditions::support_profile;
use secest::design::{lqr_gain, perturb_for_security, place_poles, DesignError, PerturbOptions};
use secest::linalg::{controllability_matrix, eigenvalues, rank};
use secest::rng::rng_from;

/// Single-input gain from Ackermann's formula, `u = G x`.
fn ackermann(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let mut phi = DMatrix::<f64>::identity(n, n);
    for &l in poles {
        phi = &phi * (a - DMatrix::identity(n, n) * l);
    }
    let ctrb_inv = controllability_matrix(a, b).try_inverse().unwrap();
    let mut en = DMatrix::zeros(1, n);
    en[(0, n - 1)] = 1.0;
    -(en * ctrb_inv * phi)
}

fn sorted_real_eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = eigenvalues(m).iter().map(|z| z.re).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[test]
fn matches_ackermann_single_input() {
    let mut rng = rng_from(11);
    for _ in 0..20 {
        let n = rng.random_range(2..5);
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.4);
        let b = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let poles: Vec<f64> = (0..n).map(|i| 0.15 + 0.2 * i as f64).collect();
        let g = place_poles(&a, &b, &poles).unwrap();
        let oracle = ackermann(&a, &b, &poles);
        assert!((&g - &oracle).amax() <= 1e-6 * (1.0 + oracle.amax()), "{g} vs {oracle}");
    }
}

#[test]
fn multi_input_places_poles() {
    let mut rng = rng_from(5);
    for _ in 0..20 {
        let n = 6;
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
        let b = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let poles = [0.1, 0.25, 0.4, 0.55, 0.7, 0.85];
        let g = place_poles(&a, &b, &poles).unwrap();
        let got = sorted_real_eigs(&(&a + &b * &g));
        for (x, y) in got.iter().zip(poles) {
            assert!((x - y).abs() < 1e-6, "{got:?}");
        }
    }
}

#[test]
fn lqr_closed_loop_is_stable() {
    let mut rng = rng_from(8);
    for _ in 0..10 {
        let a = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.6);
        let b = DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = lqr_gain(&a, &b, &DMatrix::identity(4, 4), &DMatrix::identity(2, 2), 1e-12).unwrap();
        assert!(secest::linalg::spectral_radius(&(&a + &b * g)) < 1.0);
    }
}

fn toy() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.3, 0.9])),
        dmatrix![1.0; 1.0; 1.0],
        dmatrix![2.0, -1.0, 0.0; 0.0, 1.0, 1.0],
    )
}

#[test]
fn toy_base_design_has_a_blind_mode() {
    let (a, b, c) = toy();
    let g = place_poles(&a, &b, &[0.4, 0.7, 0.8]).unwrap();
    let prof = support_profile(&(&a + &b * g), &c).unwrap();
    assert_eq!(prof.s, vec![1, 2, 2]);
}

/// Smallest total shift on a grid of multiples of `h` that makes every
/// eigenvector excite both outputs.
fn grid_oracle(h: f64, reach: i32) -> f64 {
    let (a, b, c) = toy();
    let base = [0.4, 0.7, 0.8];
    let mut best = f64::INFINITY;
    for i in -reach..=reach {
        for j in -reach..=reach {
            for k in -reach..=reach {
                let poles = [base[0] + i as f64 * h, base[1] + j as f64 * h, base[2] + k as f64 * h];
                let shift = (i.abs() + j.abs() + k.abs()) as f64 * h;
                if shift >= best {
                    continue;
                }
                let Ok(g) = place_poles(&a, &b, &poles) else { continue };
                let Ok(prof) = support_profile(&(&a + &b * g), &c) else {
                    continue;
                };
                if prof.min_support() == 2 {
                    best = shift;
                }
            }
        }
    }
    best
}

#[test]
fn toy_perturbation_reaches_full_support() {
    let (a, b, c) = toy();
    let rep = perturb_for_security(&a, &b, &c, &[0.4, 0.7, 0.8], 0.1, PerturbOptions::default()).unwrap();
    assert_eq!(rep.q_max, 0);
    assert_eq!(rep.supports, vec![2, 2, 2]);
    assert!(rep.conditions_met[4]);
    let oracle = grid_oracle(0.025, 2);
    assert!(oracle <= 0.05 + 1e-12);
    assert!(rep.total_shift <= oracle + 1e-12, "{} > {oracle}", rep.total_shift);
}

#[test]
fn already_secure_design_is_kept() {
    let (a, b, c) = toy();
    let rep = perturb_for_security(&a, &b, &c, &[0.45, 0.7, 0.8], 0.1, PerturbOptions::default()).unwrap();
    assert_eq!(rep.total_shift, 0.0);
}

#[test]
fn tiny_budget_reports_no_improvement() {
    let (a, b, c) = toy();
    match perturb_for_security(&a, &b, &c, &[0.4, 0.7, 0.8], 1e-12, PerturbOptions::default()) {
        Err(DesignError::NoImprovement { best }) => assert_eq!(best.supports, vec![1, 2, 2]),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn feedback_preserves_controllability(seed in any::<u64>(), n in 2usize..6, m in 1usize..3) {
        let mut rng = rng_from(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r0 = rank(&controllability_matrix(&a, &b), 1e-9);
        let r1 = rank(&controllability_matrix(&(&a + &b * g), &b), 1e-9);
        prop_assert_eq!(r0, r1);
    }

    #[test]
    fn placed_poles_are_exact(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = rng_from(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let b = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let poles: Vec<f64> = (0..n).map(|i| 0.1 + 0.8 * i as f64 / n as f64).collect();
        if let Ok(g) = place_poles(&a, &b, &poles) {
            let got = sorted_real_eigs(&(&a + &b * g));
            for (x, y) in got.iter().zip(&poles) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
