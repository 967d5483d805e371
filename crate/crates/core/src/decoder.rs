//! Secure decoders for a window of stacked measurements `Y = Phi x0 + E`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1solve::{basis_pursuit_fit, l1_regression_fit, SimplexSolver, SUPPORT_TOL};
use crate::linalg::mat_pow;
use crate::model::{build_observability, LtiSystem, ObservabilityCode};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMethod {
    /// Basis pursuit on `Q2^T Y`, then back-substitution.
    #[default]
    Qr,
    /// l1 regression of `Y` on `Phi`.
    Direct,
}

impl std::str::FromStr for DecodeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qr" => Ok(Self::Qr),
            "direct" => Ok(Self::Direct),
            other => Err(Error::Parse(format!("unknown decode method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult<T: Real> {
    pub x0_hat: DVector<T>,
    /// Stacked attack estimate, `p` entries per step.
    pub e_hat: DVector<T>,
    pub per_step_supports: Vec<Vec<usize>>,
    pub residual_l1: T,
    /// The LP certified a unique minimizer.
    pub unique: bool,
    pub iterations: usize,
}

impl<T: Real> DecodeResult<T> {
    fn assemble(
        code: &ObservabilityCode<T>,
        y: &DVector<T>,
        x0_hat: DVector<T>,
        e_hat: DVector<T>,
        unique: bool,
        iterations: usize,
    ) -> Self {
        let p = code.outputs();
        let thr = T::lit(SUPPORT_TOL);
        let per_step_supports = (0..code.window())
            .map(|k| (0..p).filter(|&i| e_hat[k * p + i].abs() > thr).collect())
            .collect();
        let residual_l1 = (y - code.phi() * &x0_hat).lp_norm(1);
        Self {
            x0_hat,
            e_hat,
            per_step_supports,
            residual_l1,
            unique,
            iterations,
        }
    }

    /// Attack estimate for step `k` of the window.
    pub fn step_attack(&self, k: usize, p: usize) -> DVector<T> {
        self.e_hat.rows(k * p, p).into_owned()
    }
}

fn check_len<T: Real>(code: &ObservabilityCode<T>, y: &DVector<T>) -> Result<()> {
    if y.len() != code.rows() {
        return Err(Error::DimensionMismatch(format!(
            "window has {} entries, code expects {}",
            y.len(),
            code.rows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("measurements must be finite".into()));
    }
    Ok(())
}

pub fn decode_with<T: Real>(
    solver: &mut SimplexSolver<T>,
    code: &ObservabilityCode<T>,
    y: &DVector<T>,
    method: DecodeMethod,
) -> Result<DecodeResult<T>> {
    check_len(code, y)?;
    match method {
        DecodeMethod::Qr => {
            let fit = basis_pursuit_fit(solver, &code.q2().transpose(), &code.annihilate(y))?;
            let x0 = code.solve_state(&(y - &fit.solution))?;
            Ok(DecodeResult::assemble(
                code,
                y,
                x0,
                fit.solution,
                fit.unique,
                fit.iterations,
            ))
        }
        DecodeMethod::Direct => {
            let fit = l1_regression_fit(solver, code.phi(), y)?;
            let e = y - code.phi() * &fit.solution;
            Ok(DecodeResult::assemble(
                code,
                y,
                fit.solution,
                e,
                fit.unique,
                fit.iterations,
            ))
        }
    }
}

/// Two-phase decoder: `E = argmin ||E||_1 s.t. Q2^T Y = Q2^T E`, then
/// `x0 = R1^{-1} Q1^T (Y - E)`.
pub fn decode_qr<T: Real>(code: &ObservabilityCode<T>, y: &DVector<T>) -> Result<DecodeResult<T>> {
    decode_with(&mut SimplexSolver::default(), code, y, DecodeMethod::Qr)
}

/// Single-phase decoder `x0 = argmin ||Y - Phi x||_1`.
pub fn decode_direct<T: Real>(code: &ObservabilityCode<T>, y: &DVector<T>) -> Result<DecodeResult<T>> {
    decode_with(&mut SimplexSolver::default(), code, y, DecodeMethod::Direct)
}

/// Estimate of the newest state and attack from a sliding window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingEstimate<T: Real> {
    pub x_current: DVector<T>,
    pub e_current: DVector<T>,
    pub window: DecodeResult<T>,
}

/// Decodes the latest `T` measurements of a plant, optionally compensating for a
/// known input `x(t+1) = A x(t) + B u(t)` applied inside the window.
#[derive(Debug, Clone)]
pub struct SlidingDecoder<T: Real> {
    code: ObservabilityCode<T>,
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    a_last: DMatrix<T>,
    method: DecodeMethod,
    solver: SimplexSolver<T>,
}

impl<T: Real> SlidingDecoder<T> {
    /// Decoder for the closed-loop dynamics of `sys`, input channel `B`.
    pub fn new(sys: &LtiSystem<T>, window: usize, method: DecodeMethod) -> Result<Self> {
        Self::from_matrices(sys.a_closed().clone(), sys.b().clone(), sys.c().clone(), window, method)
    }

    pub fn from_matrices(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        window: usize,
        method: DecodeMethod,
    ) -> Result<Self> {
        let sys = LtiSystem::new(a.clone(), b.clone(), c.clone())?;
        let code = build_observability(&sys, window)?;
        Ok(Self {
            a_last: mat_pow(&a, window - 1),
            code,
            a,
            b,
            c,
            method,
            solver: SimplexSolver::default(),
        })
    }

    pub fn window(&self) -> usize {
        self.code.window()
    }

    pub fn code(&self) -> &ObservabilityCode<T> {
        &self.code
    }

    pub fn method(&self) -> DecodeMethod {
        self.method
    }

    /// `history` holds at least `T` measurements, newest last. `inputs`, if
    /// nonempty, holds the known inputs applied at the first `T - 1` steps of
    /// the window.
    pub fn estimate(&mut self, history: &[DVector<T>], inputs: &[DVector<T>]) -> Result<SlidingEstimate<T>> {
        let t = self.window();
        if history.len() < t {
            return Err(Error::InsufficientHistory {
                needed: t,
                available: history.len(),
            });
        }
        let use_inputs = !inputs.is_empty();
        if use_inputs && (inputs.len() < t - 1 || inputs.iter().any(|u| u.len() != self.b.ncols())) {
            return Err(Error::DimensionMismatch(format!(
                "need {} inputs of length {}",
                t - 1,
                self.b.ncols()
            )));
        }
        let p = self.code.outputs();
        let recent = &history[history.len() - t..];
        let mut y = DVector::zeros(p * t);
        // drift[k] = sum_{j<k} A^{k-1-j} B u_j, the input response at step k.
        let n = self.a.nrows();
        let mut drift = DVector::<T>::zeros(n);
        for (k, yk) in recent.iter().enumerate() {
            if yk.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "measurement of length {}, expected {p}",
                    yk.len()
                )));
            }
            let mut adj = yk.clone();
            if use_inputs {
                if k > 0 {
                    drift = &self.a * &drift + &self.b * &inputs[k - 1];
                }
                adj -= &self.c * &drift;
            }
            y.rows_mut(k * p, p).copy_from(&adj);
        }
        let res = decode_with(&mut self.solver, &self.code, &y, self.method)?;
        let mut x_current = &self.a_last * &res.x0_hat;
        if use_inputs {
            x_current += drift;
        }
        Ok(SlidingEstimate {
            e_current: res.step_attack(t - 1, p),
            x_current,
            window: res,
        })
    }
}

/// Decodes the newest `T` entries of `history` for the closed-loop plant and
/// propagates the window's initial state to the current step.
pub fn sliding_estimate<T: Real>(
    sys: &LtiSystem<T>,
    history: &[DVector<T>],
    window: usize,
    method: DecodeMethod,
) -> Result<(DVector<T>, DVector<T>)> {
    if history.len() < window {
        return Err(Error::InsufficientHistory {
            needed: window,
            available: history.len(),
        });
    }
    let est = SlidingDecoder::from_matrices(
        sys.a_closed().clone(),
        DMatrix::zeros(sys.n(), 0),
        sys.c().clone(),
        window,
        method,
    )?
    .estimate(history, &[])?;
    Ok((est.x_current, est.e_current))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn static_system() {
        let sys = LtiSystem::autonomous(DMatrix::<f64>::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let h = vec![dvector![3.0, -1.0]; 4];
        let (x, e) = sliding_estimate(&sys, &h, 3, DecodeMethod::Qr).unwrap();
        assert!((x - dvector![3.0, -1.0]).amax() < 1e-10);
        assert!(e.amax() < 1e-10);
    }

    #[test]
    fn scalar_propagation() {
        let sys = LtiSystem::autonomous(dmatrix![2.0_f64], dmatrix![1.0]).unwrap();
        let h = vec![dvector![1.0], dvector![2.0], dvector![4.0]];
        for m in [DecodeMethod::Qr, DecodeMethod::Direct] {
            let (x, _) = sliding_estimate(&sys, &h, 3, m).unwrap();
            assert!((x[0] - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn insufficient_history() {
        let sys = LtiSystem::autonomous(dmatrix![2.0], dmatrix![1.0]).unwrap();
        assert_eq!(
            sliding_estimate(&sys, &[dvector![1.0]], 2, DecodeMethod::Qr),
            Err(Error::InsufficientHistory {
                needed: 2,
                available: 1
            })
        );
    }

    #[test]
    fn scalar_direct() {
        let code = ObservabilityCode::from_matrix(dmatrix![1.0_f64; 1.0], 2).unwrap();
        let r = decode_direct(&code, &dvector![4.0, 4.0]).unwrap();
        assert!((r.x0_hat[0] - 4.0).abs() < 1e-12);
        assert!(r.residual_l1 <= 1e-8);
    }

    #[test]
    fn known_input_compensation() {
        let a = dmatrix![0.9, 0.2; 0.0, 0.7];
        let b = dmatrix![0.0; 1.0];
        let c = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let mut dec = SlidingDecoder::from_matrices(a.clone(), b.clone(), c.clone(), 3, DecodeMethod::Qr).unwrap();
        let us = [dvector![0.5], dvector![-1.0], dvector![2.0]];
        let mut x = dvector![1.0, -2.0];
        let mut ys = Vec::new();
        for u in &us {
            ys.push(&c * &x);
            x = &a * &x + &b * u;
        }
        let est = dec.estimate(&ys, &us[..2]).unwrap();
        let x_last = {
            let mut x = dvector![1.0, -2.0];
            for u in &us[..2] {
                x = &a * &x + &b * u;
            }
            x
        };
        assert!((est.x_current - x_last).amax() < 1e-9);
    }
}
