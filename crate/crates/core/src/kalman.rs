//! Discrete Kalman filtering, alone or behind a secure attack decoder.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeMethod, SlidingDecoder};
use crate::error::{Error, Result};
use crate::model::LtiSystem;
use crate::scalar::Real;

/// Prior variance used when no initial covariance is given.
pub const DEFAULT_PRIOR_VARIANCE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    /// Number of measurements absorbed so far.
    pub t: usize,
}

impl<T: Real> KalmanState<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch("prior covariance does not match mean".into()));
        }
        Ok(Self { mean, cov, t: 0 })
    }

    /// `x = 0`, `P = 10 I`.
    pub fn default_prior(n: usize) -> Self {
        Self {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n) * T::lit(DEFAULT_PRIOR_VARIANCE),
            t: 0,
        }
    }
}

/// Which dynamics the filter propagates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// `x' = (A_o + B G) x`; the input argument is ignored.
    #[default]
    Closed,
    /// `x' = A_o x + B u` with the supplied `u`.
    Driven,
}

fn transition<T: Real>(sys: &LtiSystem<T>, prop: Propagation) -> &DMatrix<T> {
    match prop {
        Propagation::Closed => sys.a_closed(),
        Propagation::Driven => sys.a_open(),
    }
}

/// One predict/update cycle. Prediction is skipped on the first measurement
/// (`state.t == 0`), so the initial state acts as the prior for `x(0)`. `u` is
/// the input applied since the previous measurement.
pub fn kf_step<T: Real>(
    sys: &LtiSystem<T>,
    state: &KalmanState<T>,
    u: &DVector<T>,
    y: &DVector<T>,
    prop: Propagation,
) -> Result<KalmanState<T>> {
    kf_step_scaled(sys, state, u, y, prop, T::one())
}

fn kf_step_scaled<T: Real>(
    sys: &LtiSystem<T>,
    state: &KalmanState<T>,
    u: &DVector<T>,
    y: &DVector<T>,
    prop: Propagation,
    r_scale: T,
) -> Result<KalmanState<T>> {
    let n = sys.n();
    if state.mean.len() != n || y.len() != sys.p() {
        return Err(Error::DimensionMismatch(format!(
            "filter of size {} and measurement of length {} for a plant with n = {n}, p = {}",
            state.mean.len(),
            y.len(),
            sys.p()
        )));
    }
    let (mut x, mut p) = (state.mean.clone(), state.cov.clone());
    if state.t > 0 {
        let a = transition(sys, prop);
        x = a * &x;
        if prop == Propagation::Driven {
            if u.len() != sys.m() {
                return Err(Error::DimensionMismatch(format!(
                    "input of length {}, expected {}",
                    u.len(),
                    sys.m()
                )));
            }
            x += sys.b() * u;
        }
        p = a * &p * a.transpose() + sys.proc_noise_cov();
    }
    let c = sys.c();
    let r = sys.meas_noise_cov() * r_scale;
    let s = c * &p * c.transpose() + &r;
    if !(crate::linalg::condition_number(&s).as_f64() < 1e14) {
        return Err(Error::SingularInnovation);
    }
    let s_inv = s
        .clone()
        .cholesky()
        .map(|ch| ch.inverse())
        .or_else(|| s.try_inverse())
        .ok_or(Error::SingularInnovation)?;
    if s_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    let k = &p * c.transpose() * s_inv;
    x += &k * (y - c * &x);
    let ikc = DMatrix::<T>::identity(n, n) - &k * c;
    let p = &ikc * p * ikc.transpose() + &k * r * k.transpose();
    let p = (&p + p.transpose()) * T::lit(0.5);
    Ok(KalmanState {
        mean: x,
        cov: p,
        t: state.t + 1,
    })
}

/// Estimator variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorMethod {
    #[serde(rename = "kf")]
    Kf,
    #[serde(rename = "se")]
    Se,
    #[serde(rename = "se+kf")]
    SeKf,
}

impl EstimatorMethod {
    pub const ALL: [EstimatorMethod; 3] = [EstimatorMethod::Kf, EstimatorMethod::Se, EstimatorMethod::SeKf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kf => "kf",
            Self::Se => "se",
            Self::SeKf => "se+kf",
        }
    }
}

impl std::fmt::Display for EstimatorMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kf" => Ok(Self::Kf),
            "se" => Ok(Self::Se),
            "se+kf" | "sekf" => Ok(Self::SeKf),
            other => Err(Error::Parse(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Sliding-window secure decoder feeding attack-compensated measurements to a
/// Kalman filter. With the secure branch disabled it is a plain filter.
#[derive(Debug, Clone)]
pub struct CombinedEstimator<T: Real> {
    kf: KalmanState<T>,
    history: VecDeque<DVector<T>>,
    inputs: VecDeque<DVector<T>>,
    decoder: SlidingDecoder<T>,
    window: usize,
    propagation: Propagation,
    decoder_inputs: bool,
    secure: bool,
    r_scale: T,
    decoder_failures: usize,
    last_filtered: Option<DVector<T>>,
    secure_state: Option<DVector<T>>,
}

impl<T: Real> CombinedEstimator<T> {
    pub fn new(
        sys: &LtiSystem<T>,
        window: usize,
        method: DecodeMethod,
        propagation: Propagation,
        prior: KalmanState<T>,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidInput("window must be positive".into()));
        }
        if prior.mean.len() != sys.n() {
            return Err(Error::DimensionMismatch("prior does not match the plant".into()));
        }
        let decoder = match propagation {
            Propagation::Closed => SlidingDecoder::from_matrices(
                sys.a_closed().clone(),
                DMatrix::zeros(sys.n(), 0),
                sys.c().clone(),
                window,
                method,
            )?,
            Propagation::Driven => {
                SlidingDecoder::from_matrices(sys.a_open().clone(), sys.b().clone(), sys.c().clone(), window, method)?
            }
        };
        Ok(Self {
            kf: prior,
            history: VecDeque::with_capacity(window),
            inputs: VecDeque::with_capacity(window),
            decoder,
            window,
            propagation,
            decoder_inputs: propagation == Propagation::Driven,
            secure: true,
            r_scale: T::one(),
            decoder_failures: 0,
            last_filtered: None,
            secure_state: None,
        })
    }

    /// Disables the secure branch.
    pub fn plain(mut self) -> Self {
        self.secure = false;
        self
    }

    /// Decodes with the model `(a, b, C)` instead of the filter's own; decoder
    /// inputs are then passed through [`Self::step_split`].
    pub fn with_decoder_model(
        mut self,
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        method: DecodeMethod,
    ) -> Result<Self> {
        self.decoder_inputs = b.ncols() > 0;
        self.decoder = SlidingDecoder::from_matrices(a, b, c, self.window, method)?;
        self.inputs.clear();
        Ok(self)
    }

    /// Scales the measurement covariance used by the filter.
    pub fn with_noise_inflation(mut self, scale: T) -> Self {
        self.r_scale = scale;
        self
    }

    pub fn kf(&self) -> &KalmanState<T> {
        &self.kf
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn decoder_failures(&self) -> usize {
        self.decoder_failures
    }

    /// `y - e_hat` from the latest step.
    pub fn last_filtered(&self) -> Option<&DVector<T>> {
        self.last_filtered.as_ref()
    }

    /// Decoder-only estimate of the current state, once the window is full.
    pub fn secure_state(&self) -> Option<&DVector<T>> {
        self.secure_state.as_ref()
    }

    /// Absorbs measurement `y(t)`; `u` is the input applied since `y(t-1)`.
    /// Returns the filter mean and the attack estimate for this step.
    pub fn step(&mut self, sys: &LtiSystem<T>, u: &DVector<T>, y: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
        self.step_split(sys, u, u, y)
    }

    /// [`Self::step`] with separate inputs for the filter (`u`) and the
    /// decoder model (`u_decoder`).
    pub fn step_split(
        &mut self,
        sys: &LtiSystem<T>,
        u: &DVector<T>,
        u_decoder: &DVector<T>,
        y: &DVector<T>,
    ) -> Result<(DVector<T>, DVector<T>)> {
        let t = self.kf.t;
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(y.clone());
        if t > 0 && self.decoder_inputs {
            if self.inputs.len() + 1 == self.window {
                self.inputs.pop_front();
            }
            if self.window > 1 {
                self.inputs.push_back(u_decoder.clone());
            }
        }

        let mut e_hat = DVector::zeros(y.len());
        self.secure_state = None;
        if self.secure && t >= self.window {
            let hist: Vec<_> = self.history.iter().cloned().collect();
            let inputs: Vec<_> = self.inputs.iter().cloned().collect();
            match self.decoder.estimate(&hist, &inputs) {
                Ok(est) => {
                    e_hat = est.e_current;
                    self.secure_state = Some(est.x_current);
                }
                Err(err) => {
                    self.decoder_failures += 1;
                    log::warn!("secure decoder failed at step {t}, using raw measurement: {err}");
                }
            }
        }
        let filtered = y - &e_hat;
        self.kf = kf_step_scaled(sys, &self.kf, u, &filtered, self.propagation, self.r_scale)?;
        self.last_filtered = Some(filtered);
        Ok((self.kf.mean.clone(), e_hat))
    }
}

/// Free-function form of [`CombinedEstimator::step`].
pub fn combined_step<T: Real>(
    est: &mut CombinedEstimator<T>,
    sys: &LtiSystem<T>,
    u: &DVector<T>,
    y: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    est.step(sys, u, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar(q: f64, r: f64) -> LtiSystem<f64> {
        LtiSystem::autonomous(dmatrix![1.0], dmatrix![1.0])
            .unwrap()
            .with_noise(dmatrix![q], dmatrix![r])
            .unwrap()
    }

    #[test]
    fn scalar_steady_state() {
        let sys = scalar(1.0, 1.0);
        let mut st = KalmanState::default_prior(1);
        for _ in 0..200 {
            st = kf_step(&sys, &st, &dvector![], &dvector![0.3], Propagation::Closed).unwrap();
        }
        assert!((st.cov[(0, 0)] - (5.0_f64.sqrt() - 1.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn perfect_measurement() {
        let sys = LtiSystem::autonomous(dmatrix![0.9, 0.1; 0.0, 0.8], DMatrix::identity(2, 2))
            .unwrap()
            .with_noise(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2))
            .unwrap();
        let mut st = KalmanState::default_prior(2);
        for y in [dvector![1.0, 2.0], dvector![-3.0, 0.5]] {
            st = kf_step(&sys, &st, &dvector![], &y, Propagation::Closed).unwrap();
            assert!((&st.mean - &y).amax() < 1e-9);
        }
    }

    #[test]
    fn uninformative_measurement_follows_prediction() {
        let sys = LtiSystem::new(dmatrix![0.5_f64], dmatrix![1.0], dmatrix![1.0])
            .unwrap()
            .with_noise(dmatrix![0.0], dmatrix![1e30])
            .unwrap();
        let mut st = KalmanState::new(dvector![4.0], dmatrix![1.0]).unwrap();
        st.t = 1;
        let st = kf_step(&sys, &st, &dvector![1.0], &dvector![100.0], Propagation::Driven).unwrap();
        assert!((st.mean[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn singular_innovation() {
        let sys = LtiSystem::autonomous(DMatrix::<f64>::identity(2, 2), dmatrix![1.0, 0.0; 1.0, 0.0])
            .unwrap()
            .with_noise(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2))
            .unwrap();
        let st = KalmanState::default_prior(2);
        assert_eq!(
            kf_step(&sys, &st, &dvector![], &dvector![1.0, 1.0], Propagation::Closed),
            Err(Error::SingularInnovation)
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in EstimatorMethod::ALL {
            assert_eq!(m.name().parse::<EstimatorMethod>().unwrap(), m);
        }
    }
}
