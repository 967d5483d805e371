use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, matrix_from_rows, matrix_to_rows};
use crate::scalar::Real;

/// Linear time-invariant plant
///
/// ```text
/// x(t+1) = A x(t) + B u(t) + w(t),   A = A_o + B G
/// y(t)   = C x(t) + e(t) + v(t)
/// ```
///
/// When no feedback gain is attached the closed-loop matrix equals `A_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem<T: Real> {
    a_open: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    g: Option<DMatrix<T>>,
    a_closed: DMatrix<T>,
    proc_noise_cov: DMatrix<T>,
    meas_noise_cov: DMatrix<T>,
}

impl<T: Real> LtiSystem<T> {
    /// Builds a noise-free plant without feedback. `b` may have zero columns.
    pub fn new(a_open: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a_open.nrows();
        if n == 0 || a_open.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a_open.nrows(),
                a_open.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C must be p x {n} with p >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if let Some(i) = (0..c.nrows()).find(|&i| c.row(i).iter().all(|x| *x == T::zero())) {
            return Err(Error::InvalidInput(format!("row {i} of C is identically zero")));
        }
        let p = c.nrows();
        Ok(Self {
            a_closed: a_open.clone(),
            a_open,
            b,
            c,
            g: None,
            proc_noise_cov: DMatrix::zeros(n, n),
            meas_noise_cov: DMatrix::zeros(p, p),
        })
    }

    /// Autonomous plant `x(t+1) = A x(t)` with no input channel.
    pub fn autonomous(a: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, DMatrix::zeros(n, 0), c)
    }

    /// Attaches the secure local feedback `u = G x`, so `A = A_o + B G`.
    pub fn with_feedback(mut self, g: DMatrix<T>) -> Result<Self> {
        if g.nrows() != self.m() || g.ncols() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "G must be {}x{}, got {}x{}",
                self.m(),
                self.n(),
                g.nrows(),
                g.ncols()
            )));
        }
        self.a_closed = &self.a_open + &self.b * &g;
        self.g = Some(g);
        Ok(self)
    }

    pub fn with_noise(mut self, proc_noise_cov: DMatrix<T>, meas_noise_cov: DMatrix<T>) -> Result<Self> {
        validate_cov(&proc_noise_cov, self.n(), "process")?;
        validate_cov(&meas_noise_cov, self.p(), "measurement")?;
        self.proc_noise_cov = proc_noise_cov;
        self.meas_noise_cov = meas_noise_cov;
        Ok(self)
    }

    /// Same plant observed through a different output matrix.
    pub fn with_output(&self, c: DMatrix<T>) -> Result<Self> {
        let mut sys = Self::new(self.a_open.clone(), self.b.clone(), c)?;
        if let Some(g) = &self.g {
            sys = sys.with_feedback(g.clone())?;
        }
        let p = sys.p();
        sys.with_noise(self.proc_noise_cov.clone(), DMatrix::zeros(p, p))
    }

    pub fn n(&self) -> usize {
        self.a_open.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn a_open(&self) -> &DMatrix<T> {
        &self.a_open
    }
    pub fn a_closed(&self) -> &DMatrix<T> {
        &self.a_closed
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }
    pub fn g(&self) -> Option<&DMatrix<T>> {
        self.g.as_ref()
    }
    pub fn proc_noise_cov(&self) -> &DMatrix<T> {
        &self.proc_noise_cov
    }
    pub fn meas_noise_cov(&self) -> &DMatrix<T> {
        &self.meas_noise_cov
    }

    pub fn from_doc(doc: &SystemDoc) -> Result<Self> {
        let a: DMatrix<T> = matrix_from_rows(&doc.a)?;
        let n = a.nrows();
        let b = match &doc.b {
            Some(rows) if !rows.is_empty() => matrix_from_rows(rows)?,
            _ => DMatrix::zeros(n, 0),
        };
        let c = matrix_from_rows(&doc.c)?;
        let mut sys = Self::new(a, b, c)?;
        if let Some(g) = &doc.g {
            sys = sys.with_feedback(matrix_from_rows(g)?)?;
        }
        let q = match &doc.proc_noise_cov {
            Some(rows) => matrix_from_rows(rows)?,
            None => DMatrix::zeros(sys.n(), sys.n()),
        };
        let r = match &doc.meas_noise_cov {
            Some(rows) => matrix_from_rows(rows)?,
            None => DMatrix::zeros(sys.p(), sys.p()),
        };
        sys.with_noise(q, r)
    }

    pub fn to_doc(&self) -> SystemDoc {
        SystemDoc {
            a: matrix_to_rows(&self.a_open),
            b: (self.m() > 0).then(|| matrix_to_rows(&self.b)),
            c: matrix_to_rows(&self.c),
            g: self.g.as_ref().map(matrix_to_rows),
            proc_noise_cov: Some(matrix_to_rows(&self.proc_noise_cov)),
            meas_noise_cov: Some(matrix_to_rows(&self.meas_noise_cov)),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_str(s)?;
        Self::from_doc(&doc)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }
}

fn validate_cov<T: Real>(cov: &DMatrix<T>, dim: usize, what: &str) -> Result<()> {
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} noise covariance must be {dim}x{dim}, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if !linalg::is_symmetric(cov, 1e-10) {
        return Err(Error::InvalidInput(format!("{what} noise covariance is not symmetric")));
    }
    if dim > 0 {
        let floor = -T::tol(1e-10) * cov.amax().max(T::one());
        if linalg::min_symmetric_eigenvalue(cov) < floor {
            return Err(Error::InvalidInput(format!(
                "{what} noise covariance has a negative eigenvalue"
            )));
        }
    }
    Ok(())
}

/// JSON document for a plant: row-major nested arrays under the keys
/// `A`, `B`, `C`, `G`, `proc_noise_cov`, `meas_noise_cov`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proc_noise_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meas_noise_cov: Option<Vec<Vec<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn closed_loop_matches_sum() {
        let a = dmatrix![1.0, 0.1; 0.0, 1.0];
        let b = dmatrix![0.0; 0.1];
        let c = dmatrix![1.0, 0.0];
        let g = dmatrix![-2.0, -3.0];
        let sys = LtiSystem::new(a.clone(), b.clone(), c)
            .unwrap()
            .with_feedback(g.clone())
            .unwrap();
        let expect = a + b * g;
        assert!((sys.a_closed() - &expect).amax() <= 1e-12 * expect.amax());
    }

    #[test]
    fn rejects_zero_output_row() {
        let err = LtiSystem::autonomous(dmatrix![1.0, 0.0; 0.0, 1.0], dmatrix![1.0, 0.0; 0.0, 0.0]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_bad_covariances() {
        let sys = LtiSystem::autonomous(dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert!(sys.clone().with_noise(dmatrix![-1.0], dmatrix![1.0]).is_err());
        let sys2 = LtiSystem::autonomous(DMatrix::<f64>::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!(sys2
            .with_noise(dmatrix![1.0, 0.5; 0.0, 1.0], DMatrix::identity(2, 2))
            .is_err());
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"A": [[1.0, 0.0], [0.0, 2.0]], "C": [[1.0, 1.0]],
                       "meas_noise_cov": [[0.01]]}"#;
        let sys: LtiSystem<f64> = LtiSystem::from_json_str(json).unwrap();
        assert_eq!(sys.n(), 2);
        assert_eq!(sys.m(), 0);
        assert_eq!(sys.meas_noise_cov()[(0, 0)], 0.01);
        let again: LtiSystem<f64> = LtiSystem::from_json_str(&sys.to_json_string().unwrap()).unwrap();
        assert_eq!(again, sys);
    }
}
