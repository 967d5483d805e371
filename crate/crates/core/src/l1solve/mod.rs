//! l1 minimization through linear programming.

mod simplex;

use nalgebra::{DMatrix, DVector};

pub use simplex::{solve_lp, Bound, LpProblem, LpSolution, LpStatus, SimplexOptions, SimplexSolver};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_RTOL};
use crate::scalar::Real;

/// Threshold above which an entry of a recovered attack vector counts as attacked.
pub const SUPPORT_TOL: f64 = 1e-5;

/// Minimizer of an l1 program with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Fit<T: Real> {
    pub solution: DVector<T>,
    pub objective: T,
    pub unique: bool,
    pub iterations: usize,
}

fn check_status<T: Real>(sol: &LpSolution<T>) -> Result<()> {
    match sol.status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(Error::Infeasible),
        LpStatus::Unbounded => Err(Error::Unbounded),
        LpStatus::IterationLimit => Err(Error::IterationLimit(sol.iterations)),
    }
}

/// LP for `min ||E||_1 s.t. f E = y`, with `E = E+ - E-`.
pub fn basis_pursuit_problem<T: Real>(f: &DMatrix<T>, y: &DVector<T>) -> Result<LpProblem<T>> {
    let (r, d) = f.shape();
    if y.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "f has {r} rows but y has length {}",
            y.len()
        )));
    }
    let mut a = DMatrix::zeros(r, 2 * d);
    a.columns_mut(0, d).copy_from(f);
    a.columns_mut(d, d).copy_from(&(-f));
    LpProblem::new(
        DVector::from_element(2 * d, T::one()),
        a,
        y.clone(),
        vec![Bound::NonNegative; 2 * d],
    )
}

/// LP for `min ||y - phi x||_1`: variables `(x, r+, r-)` with
/// `phi x + r+ - r- = y`, `x` free.
pub fn l1_regression_problem<T: Real>(phi: &DMatrix<T>, y: &DVector<T>) -> Result<LpProblem<T>> {
    let (rows, n) = phi.shape();
    if y.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "phi has {rows} rows but y has length {}",
            y.len()
        )));
    }
    let mut a = DMatrix::zeros(rows, n + 2 * rows);
    a.columns_mut(0, n).copy_from(phi);
    a.columns_mut(n, rows).fill_with_identity();
    a.columns_mut(n + rows, rows)
        .copy_from(&(-DMatrix::<T>::identity(rows, rows)));
    let mut cost = DVector::from_element(n + 2 * rows, T::one());
    cost.rows_mut(0, n).fill(T::zero());
    let mut bounds = vec![Bound::NonNegative; n + 2 * rows];
    bounds[..n].fill(Bound::Free);
    LpProblem::new(cost, a, y.clone(), bounds)
}

/// `argmin ||E||_1` subject to `f E = y`, with diagnostics.
pub fn basis_pursuit_fit<T: Real>(solver: &mut SimplexSolver<T>, f: &DMatrix<T>, y: &DVector<T>) -> Result<L1Fit<T>> {
    let d = f.ncols();
    if f.nrows() == 0 {
        return Ok(L1Fit {
            solution: DVector::zeros(d),
            objective: T::zero(),
            unique: true,
            iterations: 0,
        });
    }
    let lp = basis_pursuit_problem(f, y)?;
    let sol = solver.solve(&lp);
    check_status(&sol)?;
    let e = sol.x.rows(0, d) - sol.x.rows(d, d);
    Ok(L1Fit {
        objective: e.lp_norm(1),
        solution: e,
        unique: sol.unique,
        iterations: sol.iterations,
    })
}

/// `argmin ||E||_1` subject to `f E = y`.
pub fn basis_pursuit<T: Real>(f: &DMatrix<T>, y: &DVector<T>) -> Result<DVector<T>> {
    basis_pursuit_fit(&mut SimplexSolver::default(), f, y).map(|fit| fit.solution)
}

/// `argmin_x ||y - phi x||_1`, with diagnostics. Among several minimizers the
/// solver's final vertex is returned.
pub fn l1_regression_fit<T: Real>(solver: &mut SimplexSolver<T>, phi: &DMatrix<T>, y: &DVector<T>) -> Result<L1Fit<T>> {
    let n = phi.ncols();
    let rank = linalg::rank(phi, RANK_RTOL);
    if rank < n {
        return Err(Error::RankDeficient { rank, expected: n });
    }
    let lp = l1_regression_problem(phi, y)?;
    let sol = solver.solve(&lp);
    check_status(&sol)?;
    let x = sol.x.rows(0, n).into_owned();
    Ok(L1Fit {
        objective: (y - phi * &x).lp_norm(1),
        solution: x,
        unique: sol.unique,
        iterations: sol.iterations,
    })
}

/// `argmin_x ||y - phi x||_1`.
pub fn l1_regression<T: Real>(phi: &DMatrix<T>, y: &DVector<T>) -> Result<DVector<T>> {
    l1_regression_fit(&mut SimplexSolver::default(), phi, y).map(|fit| fit.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn lp(cost: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> LpProblem<f64> {
        let n = cost.len();
        LpProblem::new(cost, a, b, vec![Bound::NonNegative; n]).unwrap()
    }

    #[test]
    fn single_variable_pin() {
        let sol = solve_lp(&lp(dvector![1.0], dmatrix![1.0], dvector![3.0]), 1e-8, 0);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn segment() {
        let sol = solve_lp(&lp(dvector![1.0, 1.0], dmatrix![1.0, 1.0], dvector![1.0]), 1e-8, 0);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert!(!sol.unique);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let sol = solve_lp(&lp(dvector![1.0], dmatrix![1.0], dvector![-1.0]), 1e-8, 0);
        assert_eq!(sol.status, LpStatus::Infeasible);
        let sol = solve_lp(&lp(dvector![-1.0, 0.0], dmatrix![1.0, -1.0], dvector![0.0]), 1e-8, 0);
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn basis_pursuit_single_row() {
        let e = basis_pursuit(&dmatrix![1.0, 0.0, 0.0], &dvector![2.0]).unwrap();
        assert_eq!(e, dvector![2.0, 0.0, 0.0]);
    }

    #[test]
    fn basis_pursuit_prefers_shared_column() {
        let e = basis_pursuit(&dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 1.0], &dvector![1.0, 1.0]).unwrap();
        assert!((e - dvector![0.0, 0.0, 1.0]).amax() < 1e-12);
    }

    #[test]
    fn basis_pursuit_inconsistent() {
        let r = basis_pursuit(&dmatrix![1.0, 1.0; 1.0, 1.0], &dvector![1.0, 2.0]);
        assert_eq!(r, Err(Error::Infeasible));
    }

    #[test]
    fn regression_exact_fit_and_median() {
        let phi = dmatrix![1.0_f64; 1.0; 1.0];
        let x = l1_regression(&phi, &dvector![5.0, 5.0, 5.0]).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
        let fit = l1_regression_fit(&mut SimplexSolver::default(), &phi, &dvector![0.0, 0.0, 10.0]).unwrap();
        assert!(fit.solution[0].abs() < 1e-12);
        assert!((fit.objective - 10.0).abs() < 1e-12);
    }

    #[test]
    fn regression_rank_deficient() {
        let phi = dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0];
        assert!(matches!(
            l1_regression(&phi, &dvector![1.0, 2.0, 3.0]),
            Err(Error::RankDeficient { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn text_dump() {
        let p = LpProblem::new(
            dvector![1.0, 0.0],
            dmatrix![1.0, 1.0],
            dvector![2.0],
            vec![Bound::NonNegative, Bound::Free],
        )
        .unwrap();
        let text = p.to_text();
        assert!(text.starts_with("vars 2 rows 1\n"));
        assert!(text.contains("free 1\n"));
        assert!(text.contains("= 2e0"));
    }

    #[test]
    fn single_precision() {
        let e = basis_pursuit(&dmatrix![1.0_f32, 0.0, 1.0; 0.0, 1.0, 1.0], &dvector![1.0_f32, 1.0]).unwrap();
        assert!((e - dvector![0.0_f32, 0.0, 1.0]).amax() < 1e-5);
    }
}
