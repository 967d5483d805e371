use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, SimRng};
use crate::scalar::Real;

/// Per-step additive sensor attacks `e(t)`. The attacked sensor set may change
/// from one step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSequence<T: Real> {
    vectors: Vec<DVector<T>>,
    per_step_support: Vec<Vec<usize>>,
}

impl<T: Real> AttackSequence<T> {
    /// Builds a sequence from raw vectors; supports are read off the exact
    /// nonzero pattern.
    pub fn from_vectors(vectors: Vec<DVector<T>>) -> Result<Self> {
        if let Some(first) = vectors.first() {
            let p = first.len();
            if vectors.iter().any(|v| v.len() != p) {
                return Err(Error::DimensionMismatch("attack vectors differ in length".into()));
            }
        }
        let per_step_support = vectors
            .iter()
            .map(|v| {
                v.iter()
                    .enumerate()
                    .filter(|(_, x)| **x != T::zero())
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Ok(Self {
            vectors,
            per_step_support,
        })
    }

    pub fn zeros(p: usize, len: usize) -> Self {
        Self {
            vectors: vec![DVector::zeros(p); len],
            per_step_support: vec![Vec::new(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.vectors.first().map_or(0, DVector::len)
    }

    pub fn vectors(&self) -> &[DVector<T>] {
        &self.vectors
    }

    pub fn vector(&self, t: usize) -> &DVector<T> {
        &self.vectors[t]
    }

    pub fn per_step_support(&self) -> &[Vec<usize>] {
        &self.per_step_support
    }

    pub fn total_support(&self) -> usize {
        self.per_step_support.iter().map(Vec::len).sum()
    }

    /// Vertically stacked attacks for steps `start..start + window`.
    pub fn stacked(&self, start: usize, window: usize) -> DVector<T> {
        let p = self.outputs();
        let mut out = DVector::zeros(p * window);
        for k in 0..window {
            out.rows_mut(k * p, p).copy_from(&self.vectors[start + k]);
        }
        out
    }
}

/// How attack vectors are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AttackPolicy {
    /// No attack.
    None,
    /// The same sensors are attacked at every step with Gaussian magnitudes.
    FixedSupport { support: Vec<usize>, amplitude: f64 },
    /// `total` attacks spread over the window: every step gets
    /// `floor(total / T)`, the remainder lands on random free (step, sensor) slots.
    ChangingSupportBudget { total: usize, amplitude: f64 },
    /// `slope * t` on `index`, plus Gaussian noise on one roving sensor per step.
    RampPlusRovingNoise {
        index: usize,
        slope: f64,
        roving: Vec<usize>,
        sigma: f64,
    },
    /// `amplitude * sin(2 pi t / period)` on `index`, plus one roving Gaussian sensor.
    SinusoidPlusRovingNoise {
        index: usize,
        amplitude: f64,
        period: f64,
        roving: Vec<usize>,
        sigma: f64,
    },
}

/// Default Gaussian attack scale for Monte-Carlo trials.
pub const DEFAULT_ATTACK_AMPLITUDE: f64 = 10.0;

/// Draws a nonzero Gaussian magnitude scaled by `amplitude`.
fn nonzero_gaussian(rng: &mut SimRng, amplitude: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z != 0.0 {
            return amplitude * z;
        }
    }
}

fn roving_candidates(p: usize, index: usize, roving: &[usize]) -> Vec<usize> {
    if roving.is_empty() {
        (0..p).filter(|&i| i != index).collect()
    } else {
        roving.to_vec()
    }
}

pub fn generate_attacks<T: Real>(
    policy: &AttackPolicy,
    p: usize,
    steps: usize,
    seed: u64,
) -> Result<AttackSequence<T>> {
    let mut rng = rng_from(seed);
    generate_attacks_with(policy, p, steps, &mut rng)
}

pub fn generate_attacks_with<T: Real>(
    policy: &AttackPolicy,
    p: usize,
    steps: usize,
    rng: &mut SimRng,
) -> Result<AttackSequence<T>> {
    if p == 0 || steps == 0 {
        return Err(Error::InvalidInput("p and the number of steps must be positive".into()));
    }
    let mut raw = vec![vec![0.0_f64; p]; steps];
    let check_index = |i: usize| {
        if i >= p {
            Err(Error::InvalidInput(format!(
                "sensor index {i} out of range for p = {p}"
            )))
        } else {
            Ok(())
        }
    };
    match policy {
        AttackPolicy::None => {}
        AttackPolicy::FixedSupport { support, amplitude } => {
            for &i in support {
                check_index(i)?;
            }
            for row in raw.iter_mut() {
                for &i in support {
                    row[i] = nonzero_gaussian(rng, *amplitude);
                }
            }
        }
        AttackPolicy::ChangingSupportBudget { total, amplitude } => {
            let slots = p * steps;
            if *total > slots {
                return Err(Error::BudgetTooLarge { budget: *total, slots });
            }
            let per_step = total / steps;
            let extra = total - per_step * steps;
            let mut attacked = vec![vec![false; p]; steps];
            for flags in attacked.iter_mut() {
                for i in sample(rng, p, per_step).iter() {
                    flags[i] = true;
                }
            }
            let free: Vec<(usize, usize)> = (0..steps)
                .flat_map(|t| (0..p).map(move |i| (t, i)))
                .filter(|&(t, i)| !attacked[t][i])
                .collect();
            for k in sample(rng, free.len(), extra).iter() {
                let (t, i) = free[k];
                attacked[t][i] = true;
            }
            for (row, flags) in raw.iter_mut().zip(&attacked) {
                for i in 0..p {
                    if flags[i] {
                        row[i] = nonzero_gaussian(rng, *amplitude);
                    }
                }
            }
        }
        AttackPolicy::RampPlusRovingNoise {
            index,
            slope,
            roving,
            sigma,
        } => {
            check_index(*index)?;
            let cands = roving_candidates(p, *index, roving);
            for &i in &cands {
                check_index(i)?;
            }
            for (t, row) in raw.iter_mut().enumerate() {
                row[*index] = slope * t as f64;
                if !cands.is_empty() {
                    let j = cands[rng.random_range(0..cands.len())];
                    row[j] += nonzero_gaussian(rng, *sigma);
                }
            }
        }
        AttackPolicy::SinusoidPlusRovingNoise {
            index,
            amplitude,
            period,
            roving,
            sigma,
        } => {
            check_index(*index)?;
            if *period <= 0.0 {
                return Err(Error::InvalidInput("sinusoid period must be positive".into()));
            }
            let cands = roving_candidates(p, *index, roving);
            for &i in &cands {
                check_index(i)?;
            }
            for (t, row) in raw.iter_mut().enumerate() {
                row[*index] = amplitude * (std::f64::consts::TAU * t as f64 / period).sin();
                if !cands.is_empty() {
                    let j = cands[rng.random_range(0..cands.len())];
                    row[j] += nonzero_gaussian(rng, *sigma);
                }
            }
        }
    }
    AttackSequence::from_vectors(
        raw.into_iter()
            .map(|r| DVector::from_iterator(p, r.into_iter().map(T::lit)))
            .collect(),
    )
}
