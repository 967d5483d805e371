use std::collections::BTreeSet;

use secest::kalman::EstimatorMethod;
use secest::linalg::spectral_radius;
use secest::model::AttackPolicy;
use secest::uav::*;

/// Nonzero slots of the discretized quadrotor, listed by hand.
fn expected_pattern() -> BTreeSet<(usize, usize)> {
    let mut s = BTreeSet::new();
    for off in [0, 4] {
        for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2), (2, 3), (3, 2), (3, 3)] {
            s.insert((off + i, off + j));
        }
    }
    s.extend([(8, 8), (8, 9), (9, 9)]);
    s
}

#[test]
fn state_matrix_pattern() {
    let (a, b) = QuadrotorParams::default().matrices();
    let got: BTreeSet<_> = (0..STATES)
        .flat_map(|i| (0..STATES).map(move |j| (i, j)))
        .filter(|&(i, j)| a[(i, j)] != 0.0)
        .collect();
    assert_eq!(got, expected_pattern());
    assert_eq!(got.len(), 21);
    let b_slots: Vec<_> = (0..STATES)
        .flat_map(|i| (0..INPUTS).map(move |j| (i, j)))
        .filter(|&(i, j)| b[(i, j)] != 0.0)
        .collect();
    assert_eq!(b_slots, vec![(2, 0), (3, 0), (6, 1), (7, 1), (8, 2), (9, 2)]);
}

#[test]
fn gravity_coupling_terms() {
    let p = QuadrotorParams::default();
    let (a, _) = p.matrices();
    assert!((a[(0, 2)] - p.g * p.ts * p.ts / 2.0).abs() < 1e-15);
    assert!((a[(5, 6)] - p.g * p.ts).abs() < 1e-15);
}

#[test]
fn rejects_bad_params() {
    assert!(build_quadrotor(
        &QuadrotorParams {
            mass: 0.0,
            ..Default::default()
        },
        5
    )
    .is_err());
    assert!(build_quadrotor(
        &QuadrotorParams {
            ts: -1.0,
            ..Default::default()
        },
        5
    )
    .is_err());
    assert!(build_quadrotor(&QuadrotorParams::default(), 4).is_err());
}

#[test]
fn secure_design_reaches_cap() {
    for (n_y, q) in [(3, 1), (5, 2), (8, 3)] {
        let sys = build_quadrotor(&QuadrotorParams::default(), n_y).unwrap();
        let d = design_quadrotor(&sys, &LqrWeights::default(), 0.05).unwrap();
        assert_eq!(d.secure.q_max, q);
        assert!(d.secure.conditions_met.iter().all(|&c| c));
        assert_eq!(d.lqr_q_max, 0);
        for g in [&d.lqr_gain, &d.secure.gain] {
            assert!(spectral_radius(&(sys.a_open() + sys.b() * g)) < 1.0);
        }
    }
}

#[test]
fn mitm_true_path_is_shared() {
    let r = run_mitm(&ScenarioConfig::mitm().with_seed(3)).unwrap();
    assert_eq!(r.methods.len(), 3);
    for m in &r.methods[1..] {
        assert_eq!(m.true_path, r.methods[0].true_path);
    }
    let n = r.desired_path.len();
    assert!(r
        .methods
        .iter()
        .all(|m| m.estimates.len() == n && m.attack_estimates.len() == n));
    assert_eq!(r.attacks.len(), n);
}

#[test]
fn mitm_without_attack_tracks_truth() {
    let cfg = ScenarioConfig {
        attack: AttackPolicy::None,
        ..ScenarioConfig::mitm()
    };
    let r = run_mitm(&cfg).unwrap();
    for m in &r.methods {
        assert!(m.rmse < 0.05, "{} {}", m.method, m.rmse);
        assert!(m.rmse >= 0.0);
    }
}

#[test]
fn mitm_combined_beats_filter() {
    let r = run_mitm(&ScenarioConfig::mitm().with_seed(1)).unwrap();
    let x = |m| r.method(m).unwrap().rmse_axes[0];
    assert!(x(EstimatorMethod::SeKf) < 0.5 * x(EstimatorMethod::Kf));
    assert!(x(EstimatorMethod::SeKf) <= x(EstimatorMethod::Se));
    let atk = |m| r.method(m).unwrap().attack_rmse;
    assert!(atk(EstimatorMethod::SeKf) < atk(EstimatorMethod::Kf));
}

#[test]
fn gps_without_attack_tracks_path() {
    for n_y in [3, 5, 8] {
        let cfg = ScenarioConfig {
            attack: AttackPolicy::None,
            ..ScenarioConfig::gps(n_y)
        };
        let r = run_gps_spoof(&cfg).unwrap();
        for m in &r.methods {
            assert!(m.rmse < 0.05, "n_y {n_y} {} {}", m.method, m.rmse);
        }
    }
}

#[test]
fn gps_more_sensors_restore_tracking() {
    let seeds = 20;
    let mut mean = [0.0; 3];
    for seed in 0..seeds {
        for (k, n_y) in [3, 5, 8].into_iter().enumerate() {
            let r = run_gps_spoof(&ScenarioConfig::gps(n_y).with_seed(seed)).unwrap();
            mean[k] += r.method(EstimatorMethod::SeKf).unwrap().rmse / seeds as f64;
        }
    }
    assert!(mean[0] >= mean[1] && mean[1] >= mean[2], "{mean:?}");
}

#[test]
fn gps_three_sensors_error_is_bounded() {
    let r = run_gps_spoof(&ScenarioConfig::gps(3)).unwrap();
    assert!(r.q_max <= 1);
    let m = r.method(EstimatorMethod::SeKf).unwrap();
    assert!(m.rmse.is_finite() && m.rmse < 20.0);
}

#[test]
fn result_serializes() {
    let cfg = ScenarioConfig {
        steps: 30,
        ..ScenarioConfig::mitm()
    };
    let r = run_mitm(&cfg).unwrap();
    let json = r.to_json_string().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["scenario"], "mitm");
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 30 * 3);
    let dir = std::env::temp_dir().join(format!("secest-uav-{}", std::process::id()));
    r.save(&dir).unwrap();
    assert!(dir.join("result.json").exists() && dir.join("trace.csv").exists());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_round_trips() {
    let cfg = ScenarioConfig::gps(8);
    let s = serde_json::to_string(&cfg).unwrap();
    let back: ScenarioConfig = serde_json::from_str(&s).unwrap();
    assert_eq!(back.n_y, 8);
    let partial: ScenarioConfig = serde_json::from_str(r#"{"n_y": 3, "steps": 50}"#).unwrap();
    assert_eq!(partial.steps, 50);
    assert!(partial.validate().is_ok());
}
