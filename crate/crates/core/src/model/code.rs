use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_RTOL};
use crate::model::LtiSystem;
use crate::scalar::Real;

/// Stacked observability map `Phi = [C; CA; ...; CA^{T-1}]` together with
/// the split `[Q1 Q2]` of its full QR factorization.
///
/// `Q2^T` annihilates the range of `Phi`, turning `Y = Phi x + E` into the
/// attack-only observation `Q2^T Y = Q2^T E`.
#[derive(Debug, Clone)]
pub struct ObservabilityCode<T: Real> {
    phi: DMatrix<T>,
    q1: DMatrix<T>,
    q2: DMatrix<T>,
    r1: DMatrix<T>,
    window: usize,
    outputs: usize,
}

impl<T: Real> ObservabilityCode<T> {
    /// Wraps an arbitrary coding matrix whose rows are grouped in `window`
    /// blocks. Fails when `phi` lacks full column rank.
    pub fn from_matrix(phi: DMatrix<T>, window: usize) -> Result<Self> {
        let (rows, n) = phi.shape();
        if window == 0 || rows == 0 || rows % window != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{rows} rows cannot be split into {window} equal blocks"
            )));
        }
        if rows < n {
            return Err(Error::UnobservableWindow {
                window,
                rank: linalg::rank(&phi, RANK_RTOL),
                n,
            });
        }
        let rank = linalg::rank(&phi, RANK_RTOL);
        if rank < n {
            return Err(Error::UnobservableWindow { window, rank, n });
        }
        let qr = linalg::householder_qr(&phi);
        Ok(Self {
            q1: qr.q.columns(0, n).into_owned(),
            q2: qr.q.columns(n, rows - n).into_owned(),
            r1: qr.r.rows(0, n).into_owned(),
            phi,
            window,
            outputs: rows / window,
        })
    }

    pub fn phi(&self) -> &DMatrix<T> {
        &self.phi
    }
    pub fn q1(&self) -> &DMatrix<T> {
        &self.q1
    }
    pub fn q2(&self) -> &DMatrix<T> {
        &self.q2
    }
    pub fn r1(&self) -> &DMatrix<T> {
        &self.r1
    }
    pub fn window(&self) -> usize {
        self.window
    }
    /// Outputs per time step (`p`).
    pub fn outputs(&self) -> usize {
        self.outputs
    }
    pub fn n(&self) -> usize {
        self.phi.ncols()
    }
    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    /// `Q2^T y`.
    pub fn annihilate(&self, y: &DVector<T>) -> DVector<T> {
        self.q2.tr_mul(y)
    }

    /// `R1^{-1} Q1^T v`: the least-squares preimage of `v` under `Phi`.
    pub fn solve_state(&self, v: &DVector<T>) -> Result<DVector<T>> {
        let rhs = self.q1.tr_mul(v);
        self.r1.solve_upper_triangular(&rhs).ok_or(Error::RankDeficient {
            rank: linalg::rank(&self.r1, RANK_RTOL),
            expected: self.n(),
        })
    }
}

/// Builds `Phi` for the closed-loop pair `(A, C)` over a window of `window` steps.
pub fn build_observability<T: Real>(sys: &LtiSystem<T>, window: usize) -> Result<ObservabilityCode<T>> {
    ObservabilityCode::from_matrix(stack_observability(sys.a_closed(), sys.c(), window)?, window)
}

/// Stacked `C A^t` blocks for `t = 0..window`, without rank checks.
pub fn stack_observability<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>, window: usize) -> Result<DMatrix<T>> {
    if window == 0 {
        return Err(Error::InvalidInput("window must be at least 1".into()));
    }
    if c.ncols() != a.nrows() || !a.is_square() {
        return Err(Error::DimensionMismatch("C and A are incompatible".into()));
    }
    let (p, n) = c.shape();
    let mut phi = DMatrix::<T>::zeros(p * window, n);
    let mut blk = c.clone();
    for t in 0..window {
        phi.view_mut((t * p, 0), (p, n)).copy_from(&blk);
        blk = &blk * a;
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn identity_pair() {
        let sys = LtiSystem::autonomous(DMatrix::<f64>::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let code = build_observability(&sys, 2).unwrap();
        let expect = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 0.0; 0.0, 1.0];
        assert_eq!(code.phi(), &expect);
        assert_eq!(code.q2().ncols(), 2);
    }

    #[test]
    fn diagonal_pair_by_hand() {
        let sys = LtiSystem::autonomous(dmatrix![1.0, 0.0; 0.0, 2.0], dmatrix![1.0, 1.0]).unwrap();
        let code = build_observability(&sys, 2).unwrap();
        assert_eq!(code.phi(), &dmatrix![1.0, 1.0; 1.0, 2.0]);
        assert_eq!(code.q2().ncols(), 0);
    }

    #[test]
    fn unobservable_pair_rejected() {
        let sys = LtiSystem::autonomous(DMatrix::<f64>::identity(2, 2), dmatrix![1.0, 0.0]).unwrap();
        for window in 1..5 {
            match build_observability(&sys, window) {
                Err(Error::UnobservableWindow { rank, n, .. }) => {
                    assert_eq!((rank, n), (1, 2));
                }
                other => panic!("expected UnobservableWindow, got {other:?}"),
            }
        }
    }

    #[test]
    fn factor_invariants() {
        let a = dmatrix![0.5, 0.2, 0.0; -0.1, 0.7, 0.3; 0.0, 0.1, 0.9];
        let c = dmatrix![1.0, 0.0, 0.5; 0.0, 1.0, -1.0];
        let sys = LtiSystem::autonomous(a, c).unwrap();
        let code = build_observability(&sys, 4).unwrap();
        let phi = code.phi();
        let scale = phi.amax();
        assert!((code.q1() * code.r1() - phi).amax() <= 1e-10 * scale);
        assert!((code.q2().transpose() * phi).amax() <= 1e-10);
        let mut q = code.q1().clone().resize_horizontally(8, 0.0);
        q.view_mut((0, 3), (8, 5)).copy_from(code.q2());
        assert!((q.transpose() * &q - DMatrix::identity(8, 8)).amax() <= 1e-10);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(code.r1()[(i, j)], 0.0);
            }
        }
    }
}
