use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::model::{AttackSequence, LtiSystem};
use crate::rng::{rng_from, SimRng};
use crate::scalar::Real;

/// Simulated run of a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    pub clean_outputs: Vec<DVector<T>>,
    pub corrupted_outputs: Vec<DVector<T>>,
    pub attacks: AttackSequence<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Corrupted outputs for steps `start..start + window`, stacked.
    pub fn stacked_outputs(&self, start: usize, window: usize) -> DVector<T> {
        let p = self.corrupted_outputs.first().map_or(0, DVector::len);
        let mut out = DVector::zeros(p * window);
        for k in 0..window {
            out.rows_mut(k * p, p).copy_from(&self.corrupted_outputs[start + k]);
        }
        out
    }

    /// CSV with columns `t, x_1..x_n, y_1..y_p, e_1..e_p`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.states.first().map_or(0, DVector::len);
        let p = self.attacks.outputs();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=p).map(|i| format!("y_{i}")));
        header.extend((1..=p).map(|i| format!("e_{i}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.states[t].iter().map(|v| v.as_f64().to_string()));
            rec.extend(self.corrupted_outputs[t].iter().map(|v| v.as_f64().to_string()));
            rec.extend(self.attacks.vector(t).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian sampler for a fixed covariance; `None` when the covariance is zero.
pub(crate) struct NoiseSource<T: Real> {
    factor: Option<DMatrix<T>>,
    dim: usize,
}

impl<T: Real> NoiseSource<T> {
    pub(crate) fn new(cov: &DMatrix<T>) -> Self {
        let dim = cov.nrows();
        let factor = (dim > 0 && cov.amax() > T::zero()).then(|| psd_factor(cov));
        Self { factor, dim }
    }

    pub(crate) fn sample(&self, rng: &mut SimRng) -> DVector<T> {
        match &self.factor {
            None => DVector::zeros(self.dim),
            Some(l) => {
                let z = DVector::from_fn(self.dim, |_, _| {
                    let v: f64 = rng.sample(StandardNormal);
                    T::lit(v)
                });
                l * z
            }
        }
    }
}

/// Runs `x(t+1) = A x(t) + w(t)` under the closed-loop matrix. The recorded
/// inputs are `G x(t)` when a gain is attached, zeros otherwise.
pub fn simulate<T: Real>(
    sys: &LtiSystem<T>,
    x0: &DVector<T>,
    attacks: &AttackSequence<T>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory<T>> {
    let inputs: Vec<DVector<T>> = Vec::new();
    run(sys, x0, attacks, steps, seed, Drive::Closed, &inputs)
}

/// Runs `x(t+1) = A_o x(t) + B u(t) + w(t)` with the given open-loop inputs.
pub fn simulate_driven<T: Real>(
    sys: &LtiSystem<T>,
    x0: &DVector<T>,
    inputs: &[DVector<T>],
    attacks: &AttackSequence<T>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory<T>> {
    if inputs.len() < steps {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for {steps} steps",
            inputs.len()
        )));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != sys.m()) {
        return Err(Error::DimensionMismatch(format!(
            "input of length {}, expected {}",
            u.len(),
            sys.m()
        )));
    }
    run(sys, x0, attacks, steps, seed, Drive::Open, inputs)
}

#[derive(Clone, Copy, PartialEq)]
enum Drive {
    Closed,
    Open,
}

fn run<T: Real>(
    sys: &LtiSystem<T>,
    x0: &DVector<T>,
    attacks: &AttackSequence<T>,
    steps: usize,
    seed: u64,
    drive: Drive,
    given_inputs: &[DVector<T>],
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be positive".into()));
    }
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            sys.n()
        )));
    }
    if attacks.len() < steps || attacks.outputs() != sys.p() {
        return Err(Error::DimensionMismatch(format!(
            "attack sequence is {}x{}, need at least {steps} steps of length {}",
            attacks.len(),
            attacks.outputs(),
            sys.p()
        )));
    }
    let mut rng = rng_from(seed);
    let w = NoiseSource::new(sys.proc_noise_cov());
    let v = NoiseSource::new(sys.meas_noise_cov());
    let mut states = Vec::with_capacity(steps);
    let mut inputs = Vec::with_capacity(steps);
    let mut clean = Vec::with_capacity(steps);
    let mut corrupted = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for t in 0..steps {
        let yc = sys.c() * &x;
        let y = &yc + attacks.vector(t) + v.sample(&mut rng);
        let (u, next) = match drive {
            Drive::Closed => {
                let u = match sys.g() {
                    Some(g) => g * &x,
                    None => DVector::zeros(sys.m()),
                };
                (u, sys.a_closed() * &x)
            }
            Drive::Open => {
                let u = given_inputs[t].clone();
                let next = sys.a_open() * &x + sys.b() * &u;
                (u, next)
            }
        };
        states.push(x);
        inputs.push(u);
        clean.push(yc);
        corrupted.push(y);
        x = next + w.sample(&mut rng);
    }
    let attacks = AttackSequence::from_vectors(attacks.vectors()[..steps].to_vec())?;
    Ok(Trajectory {
        states,
        inputs,
        clean_outputs: clean,
        corrupted_outputs: corrupted,
        attacks,
    })
}
