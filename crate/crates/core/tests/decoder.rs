use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use secest::decoder::{decode_direct, decode_qr};
use secest::model::{build_observability, LtiSystem, ObservabilityCode};
use secest::rng::rng_from;

fn gaussian(rng: &mut secest::rng::SimRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// l0 oracle: tries every set of `k` corrupted rows and keeps the states that
/// explain all remaining rows exactly.
fn l0_oracle(phi: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Vec<DVector<f64>> {
    let rows = phi.nrows();
    let mut found: Vec<DVector<f64>> = Vec::new();
    for mask in 0u32..(1 << rows) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let keep: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) == 0).collect();
        let sub = phi.select_rows(&keep);
        let ys = DVector::from_fn(keep.len(), |r, _| y[keep[r]]);
        let Ok(x) = sub.clone().svd(true, true).solve(&ys, 1e-12) else {
            continue;
        };
        if (&sub * &x - &ys).amax() <= 1e-8 * (1.0 + ys.amax()) && !found.iter().any(|f| (f - &x).amax() < 1e-6) {
            found.push(x);
        }
    }
    found
}

#[test]
fn scalar_state_is_the_median() {
    // One state, five identical sensors: l1 regression returns the median.
    let code = ObservabilityCode::<f64>::from_matrix(DMatrix::from_element(5, 1, 1.0), 1).unwrap();
    let y = DVector::from_vec(vec![2.0, 2.0, 9.0, -4.0, 2.5]);
    for r in [decode_qr(&code, &y).unwrap(), decode_direct(&code, &y).unwrap()] {
        assert!((r.x0_hat[0] - 2.0).abs() < 1e-10);
        assert!((r.residual_l1 - 13.5).abs() < 1e-10);
    }
}

#[test]
fn frozen_two_state_window() {
    // x0 = (1, -1), A = diag(0.5, 2), C = [1 0; 0 1; 1 1], sensor 3 hit by 4 at step 0.
    let sys =
        LtiSystem::<f64>::autonomous(dmatrix![0.5, 0.0; 0.0, 2.0], dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0]).unwrap();
    let code = build_observability(&sys, 2).unwrap();
    let y = DVector::from_vec(vec![1.0, -1.0, 4.0, 0.5, -2.0, -1.5]);
    let r = decode_qr(&code, &y).unwrap();
    assert!((r.x0_hat - DVector::from_vec(vec![1.0, -1.0])).amax() < 1e-10);
    assert_eq!(r.per_step_supports, vec![vec![2], vec![]]);
    assert!((r.e_hat[2] - 4.0).abs() < 1e-10);
}

#[test]
fn matches_l0_oracle_on_toy_codes() {
    let mut rng = rng_from(41);
    let (n, p, window) = (2, 3, 3);
    let mut agree = 0;
    for _ in 0..60 {
        let phi = gaussian(&mut rng, p * window, n);
        let code = ObservabilityCode::from_matrix(phi.clone(), window).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = &phi * &x0;
        let row = rng.random_range(0..p * window);
        y[row] += 6.0;
        let oracle = l0_oracle(&phi, &y, 1);
        assert_eq!(oracle.len(), 1);
        assert!((&oracle[0] - &x0).amax() < 1e-8);
        let r = decode_qr(&code, &y).unwrap();
        // The l1 answer is never worse than the truth, and equals it when it is 1-sparse.
        assert!(r.residual_l1 <= 6.0 + 1e-8);
        if r.per_step_supports.iter().map(Vec::len).sum::<usize>() <= 1 {
            assert!((&r.x0_hat - &oracle[0]).amax() < 1e-8);
            agree += 1;
        }
    }
    assert!(agree >= 55, "{agree}");
}

#[test]
fn single_precision_decoder() {
    let mut rng = rng_from(5);
    let phi = gaussian(&mut rng, 12, 3);
    let x0 = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let mut y = &phi * &x0;
    y[4] += 3.0;
    let code32 = ObservabilityCode::<f32>::from_matrix(phi.map(|v| v as f32), 3).unwrap();
    let r = decode_qr(&code32, &y.map(|v| v as f32)).unwrap();
    assert!((r.x0_hat.map(f64::from) - x0).amax() < 1e-3);
}

#[test]
fn rejects_wrong_length_and_nan() {
    let code = ObservabilityCode::from_matrix(DMatrix::from_element(4, 1, 1.0), 2).unwrap();
    assert!(decode_qr(&code, &DVector::zeros(3)).is_err());
    let mut y = DVector::zeros(4);
    y[1] = f64::NAN;
    assert!(decode_direct(&code, &y).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn both_programs_reach_the_same_optimum(seed in 0u64..10_000, n in 1usize..4, p in 2usize..5, k in 0usize..4) {
        let mut rng = rng_from(seed);
        let window = n.max(2);
        let phi = gaussian(&mut rng, p * window, n);
        let code = ObservabilityCode::from_matrix(phi.clone(), window).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut e = DVector::zeros(p * window);
        for _ in 0..k {
            let i = rng.random_range(0..p * window);
            e[i] = 5.0 * rng.sample::<f64, _>(StandardNormal);
        }
        let y = &phi * &x0 + &e;
        let qr = decode_qr(&code, &y).unwrap();
        let direct = decode_direct(&code, &y).unwrap();
        let scale = 1.0 + y.amax();
        prop_assert!((qr.residual_l1 - direct.residual_l1).abs() <= 1e-7 * scale * (p * window) as f64);
        prop_assert!(qr.residual_l1 <= e.lp_norm(1) + 1e-7 * scale);
        for r in [&qr, &direct] {
            prop_assert!((&y - &phi * &r.x0_hat - &r.e_hat).amax() <= 1e-7 * scale);
        }
        if qr.unique && direct.unique {
            prop_assert!((&qr.x0_hat - &direct.x0_hat).amax() <= 1e-6 * scale);
        }
    }

    #[test]
    fn clean_windows_decode_exactly(seed in 0u64..10_000, n in 1usize..5, p in 1usize..4) {
        let mut rng = rng_from(seed);
        let window = n + 1;
        let phi = gaussian(&mut rng, p * window, n);
        let code = ObservabilityCode::from_matrix(phi.clone(), window).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = decode_qr(&code, &(&phi * &x0)).unwrap();
        prop_assert!((&r.x0_hat - &x0).amax() < 1e-8);
        prop_assert!(r.per_step_supports.iter().all(Vec::is_empty));
    }
}
