//! Monte-Carlo success-rate experiments for the l1 decoder and a small
//! fixed-support versus roving-attack demonstration.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::q_cap;
use crate::decoder::{decode_direct, decode_qr, DecodeMethod, DecodeResult};
use crate::design::{perturb_for_security, place_poles, DesignError, PerturbOptions};
use crate::error::{Error, Result};
use crate::linalg::{null_space, rank, spectral_radius, RANK_RTOL};
use crate::model::{build_observability, generate_attacks_with, AttackPolicy, LtiSystem, ObservabilityCode};
use crate::rng::{derive_seed, rng_from, SimRng};

/// `||x0_hat - x0||_inf` at or below this counts as exact recovery.
pub const SUCCESS_TOL: f64 = 1e-4;

/// Closed-loop poles of the designed family are spread evenly over this range.
pub const DESIGNED_POLE_RANGE: (f64, f64) = (0.8, 0.98);

/// Closed-loop poles of the poor family are drawn uniformly from this range.
pub const POOR_POLE_RANGE: (f64, f64) = (0.0, 0.3);

/// Attempts at drawing a usable system before a trial is given up.
const MAX_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    /// Gaussian `A` rescaled into the unit disk, no feedback.
    RandomLti,
    /// Gaussian plant with slow, evenly spread closed-loop poles and every
    /// eigenvector visible on all outputs.
    DesignedFeedback,
    /// Gaussian plant with fast, randomly clustered closed-loop poles.
    PoorFeedback,
    /// I.i.d. Gaussian coding matrix of the same shape as the stacked code.
    IdealGaussianCoding,
}

impl MatrixSource {
    pub const ALL: [MatrixSource; 4] = [
        MatrixSource::IdealGaussianCoding,
        MatrixSource::DesignedFeedback,
        MatrixSource::PoorFeedback,
        MatrixSource::RandomLti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RandomLti => "random_lti",
            Self::DesignedFeedback => "designed_feedback",
            Self::PoorFeedback => "poor_feedback",
            Self::IdealGaussianCoding => "ideal_gaussian_coding",
        }
    }
}

impl std::fmt::Display for MatrixSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MatrixSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown matrix source {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    /// Decoding window `T`.
    pub window: usize,
    /// Plant inputs for the feedback families.
    pub inputs: usize,
    pub source: MatrixSource,
    /// Total attacked entries per window.
    pub budgets: Vec<usize>,
    pub trials_per_point: usize,
    pub amplitude: f64,
    pub method: DecodeMethod,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 8,
            p: 10,
            window: 8,
            inputs: 2,
            source: MatrixSource::DesignedFeedback,
            budgets: (0..=48).step_by(4).collect(),
            trials_per_point: 500,
            amplitude: crate::model::DEFAULT_ATTACK_AMPLITUDE,
            method: DecodeMethod::Qr,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.window == 0 || self.inputs == 0 {
            return Err(Error::InvalidInput("n, p, window and inputs must be positive".into()));
        }
        if self.trials_per_point == 0 {
            return Err(Error::InvalidInput("trials_per_point must be positive".into()));
        }
        let slots = self.p * self.window;
        if let Some(&b) = self.budgets.iter().find(|&&b| b > slots) {
            return Err(Error::BudgetTooLarge { budget: b, slots });
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::InvalidInput("amplitude must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub budget: usize,
    pub success_rate: f64,
    /// Mean relative error `||x0_hat - x0||_2 / ||x0||_2` over failed trials.
    pub mean_error: f64,
    pub trials: usize,
    pub successes: usize,
    /// Failed trials whose LP optimum was not certified unique.
    pub failures_nonunique: usize,
    /// Trials where no usable system was drawn or the LP failed.
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRateTable {
    pub source: MatrixSource,
    pub n: usize,
    pub p: usize,
    pub window: usize,
    /// `ceil(p/2 - 1) * T`, the largest budget a structured code can correct.
    pub correctable_budget: usize,
    pub rows: Vec<SuccessRow>,
}

impl SuccessRateTable {
    pub fn row(&self, budget: usize) -> Option<&SuccessRow> {
        self.rows.iter().find(|r| r.budget == budget)
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "source",
            "n",
            "p",
            "window",
            "budget",
            "success_rate",
            "mean_error",
            "trials",
            "successes",
            "failures_nonunique",
            "errors",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                self.source.name().to_string(),
                self.n.to_string(),
                self.p.to_string(),
                self.window.to_string(),
                r.budget.to_string(),
                r.success_rate.to_string(),
                r.mean_error.to_string(),
                r.trials.to_string(),
                r.successes.to_string(),
                r.failures_nonunique.to_string(),
                r.errors.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json_string()?).map_err(io)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.csv"))).map_err(io)?;
        self.write_csv(f)
    }
}

fn decode(method: DecodeMethod, code: &ObservabilityCode<f64>, y: &DVector<f64>) -> Result<DecodeResult<f64>> {
    match method {
        DecodeMethod::Qr => decode_qr(code, y),
        DecodeMethod::Direct => decode_direct(code, y),
    }
}

fn gaussian(rng: &mut SimRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn evenly_spaced(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Draws one plant of `source` (not used for the ideal coding family).
pub fn draw_system(source: MatrixSource, n: usize, p: usize, m: usize, rng: &mut SimRng) -> Result<LtiSystem<f64>> {
    let a = gaussian(rng, n, n) / (n as f64).sqrt();
    let c = gaussian(rng, p, n);
    match source {
        MatrixSource::IdealGaussianCoding => Err(Error::InvalidInput("the ideal family has no plant".into())),
        MatrixSource::RandomLti => {
            let rho = spectral_radius(&a);
            let a = if rho >= 1.0 { a * (0.99 / rho) } else { a };
            LtiSystem::autonomous(a, c)
        }
        MatrixSource::DesignedFeedback => {
            let b = gaussian(rng, n, m);
            let poles = evenly_spaced(n, DESIGNED_POLE_RANGE);
            let report = match perturb_for_security(&a, &b, &c, &poles, 0.01, PerturbOptions::default()) {
                Ok(r) => r,
                Err(DesignError::NoImprovement { best }) => *best,
                Err(DesignError::Core(e)) => return Err(e),
            };
            LtiSystem::new(a, b, c)?.with_feedback(report.gain)
        }
        MatrixSource::PoorFeedback => {
            let b = gaussian(rng, n, m);
            let (lo, hi) = POOR_POLE_RANGE;
            let poles: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            let g = place_poles(&a, &b, &poles)?;
            LtiSystem::new(a, b, c)?.with_feedback(g)
        }
    }
}

/// Draws the stacked code of one trial, redrawing unobservable windows.
pub fn draw_code(cfg: &ExperimentConfig, rng: &mut SimRng) -> Result<ObservabilityCode<f64>> {
    let mut last = Error::InvalidInput("no draw attempted".into());
    for _ in 0..MAX_DRAWS {
        let code = match cfg.source {
            MatrixSource::IdealGaussianCoding => {
                ObservabilityCode::from_matrix(gaussian(rng, cfg.p * cfg.window, cfg.n), cfg.window)
            }
            src => draw_system(src, cfg.n, cfg.p, cfg.inputs, rng).and_then(|s| build_observability(&s, cfg.window)),
        };
        match code {
            Ok(c) => return Ok(c),
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    pub rel_error: f64,
    pub unique: bool,
    pub error: bool,
}

/// One reproducible trial: fresh code, Gaussian `x0`, changing-support
/// attack with `budget` entries.
pub fn run_trial(cfg: &ExperimentConfig, budget: usize, seed: u64) -> TrialOutcome {
    let failed = TrialOutcome {
        success: false,
        rel_error: f64::NAN,
        unique: false,
        error: true,
    };
    let mut rng = rng_from(seed);
    let Ok(code) = draw_code(cfg, &mut rng) else {
        return failed;
    };
    let x0 = DVector::from_fn(cfg.n, |_, _| rng.sample(StandardNormal));
    let policy = AttackPolicy::ChangingSupportBudget {
        total: budget,
        amplitude: cfg.amplitude,
    };
    let Ok(atk) = generate_attacks_with::<f64>(&policy, cfg.p, cfg.window, &mut rng) else {
        return failed;
    };
    let y = code.phi() * &x0 + atk.stacked(0, cfg.window);
    match decode(cfg.method, &code, &y) {
        Ok(r) => {
            let diff = &r.x0_hat - &x0;
            TrialOutcome {
                success: diff.amax() <= SUCCESS_TOL,
                rel_error: diff.norm() / x0.norm().max(f64::MIN_POSITIVE),
                unique: r.unique,
                error: false,
            }
        }
        Err(_) => failed,
    }
}

fn aggregate(budget: usize, outcomes: &[TrialOutcome]) -> SuccessRow {
    let trials = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.success).count();
    let failed: Vec<&TrialOutcome> = outcomes.iter().filter(|o| !o.success && !o.error).collect();
    let mean_error = if failed.is_empty() {
        0.0
    } else {
        failed.iter().map(|o| o.rel_error).sum::<f64>() / failed.len() as f64
    };
    SuccessRow {
        budget,
        success_rate: successes as f64 / trials as f64,
        mean_error,
        trials,
        successes,
        failures_nonunique: failed.iter().filter(|o| !o.unique).count(),
        errors: outcomes.iter().filter(|o| o.error).count(),
    }
}

/// Success rate of the l1 decoder per attack budget. Trials run in parallel
/// on the current rayon pool; every trial owns a seed derived from the
/// config seed, the budget index and the trial index, so results do not
/// depend on scheduling.
pub fn run_montecarlo(cfg: &ExperimentConfig) -> Result<SuccessRateTable> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.budgets.len())
        .flat_map(|b| (0..cfg.trials_per_point).map(move |t| (b, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(b, t)| run_trial(cfg, cfg.budgets[b], derive_seed(cfg.seed, &[b as u64, t as u64])))
        .collect();
    let rows = outcomes
        .chunks(cfg.trials_per_point)
        .zip(&cfg.budgets)
        .map(|(chunk, &budget)| aggregate(budget, chunk))
        .collect();
    Ok(SuccessRateTable {
        source: cfg.source,
        n: cfg.n,
        p: cfg.p,
        window: cfg.window,
        correctable_budget: q_cap(cfg.p) * cfg.window,
        rows,
    })
}

/// Runs the same sweep for several sources (seeds shared so that every
/// source sees the same `x0` and attack draws only when shapes agree).
pub fn run_comparison(base: &ExperimentConfig, sources: &[MatrixSource]) -> Result<Vec<SuccessRateTable>> {
    sources
        .iter()
        .map(|&source| run_montecarlo(&ExperimentConfig { source, ..base.clone() }))
        .collect()
}

/// Sensors `i` whose rows of the `p x T` error matrix are nonzero.
pub fn row_support(e: &DVector<f64>, p: usize, window: usize) -> Vec<usize> {
    (0..p).filter(|&i| (0..window).any(|k| e[k * p + i] != 0.0)).collect()
}

fn rows_of(p: usize, window: usize, sensors: &[usize]) -> Vec<usize> {
    (0..window)
        .flat_map(|k| sensors.iter().map(move |&i| k * p + i))
        .collect()
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn subsets(p: usize, k: usize) -> Vec<Vec<usize>> {
    crate::conditions::Combinations::new(p, k).collect()
}

/// Largest `q` such that removing any `2q` sensors keeps the stacked code
/// injective; `None` when the code is not injective to begin with.
pub fn fixed_support_capacity(phi: &DMatrix<f64>, p: usize, window: usize) -> Option<usize> {
    let n = phi.ncols();
    let injective = |removed: &[usize]| {
        let keep: Vec<usize> = (0..p).filter(|i| !removed.contains(i)).collect();
        let sub = select_rows(phi, &rows_of(p, window, &keep));
        sub.nrows() >= n && rank(&sub, RANK_RTOL) == n
    };
    if !injective(&[]) {
        return None;
    }
    let mut q = 0;
    while 2 * (q + 1) < p && subsets(p, 2 * (q + 1)).iter().all(|s| injective(s)) {
        q += 1;
    }
    Some(q)
}

/// Brute-force fixed-support decoder: the smallest sensor set (at most
/// `max_attacked` sensors) whose removal leaves `y` exactly consistent with
/// a unique state.
pub fn fixed_support_decode(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    p: usize,
    window: usize,
    max_attacked: usize,
) -> Option<DVector<f64>> {
    let n = phi.ncols();
    let scale = 1.0 + y.amax();
    for k in 0..=max_attacked.min(p) {
        for removed in subsets(p, k) {
            let keep: Vec<usize> = (0..p).filter(|i| !removed.contains(i)).collect();
            let rows = rows_of(p, window, &keep);
            let sub = select_rows(phi, &rows);
            if sub.nrows() < n || rank(&sub, RANK_RTOL) < n {
                continue;
            }
            let ys = DVector::from_fn(rows.len(), |r, _| y[rows[r]]);
            let Ok(x) = sub.clone().svd(true, true).solve(&ys, 1e-12) else {
                continue;
            };
            if (&sub * &x - &ys).amax() <= 1e-8 * scale {
                return Some(x);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoCase {
    pub attack: Vec<Vec<f64>>,
    pub row_support: Vec<usize>,
    pub fixed_estimate: Option<Vec<f64>>,
    pub fixed_success: bool,
    pub l1_estimate: Option<Vec<f64>>,
    pub l1_success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedVsRovingReport {
    pub n: usize,
    pub p: usize,
    pub window: usize,
    pub x0: Vec<f64>,
    /// See [`fixed_support_capacity`].
    pub fixed_capacity: Option<usize>,
    /// A nonzero `z` with `Phi z = 0`, when one exists.
    pub invisible_state: Option<Vec<f64>>,
    /// One attacked sensor per step, cycling through all sensors.
    pub cycling: DemoCase,
    /// Sensor 0 attacked at every step.
    pub fixed: DemoCase,
}

/// Contrasts a brute-force fixed-support decoder with the l1 decoder on a
/// tiny designed plant. The plant has `n` states, `p <= 4` sensors and the
/// window is `T <= 4`.
pub fn run_fixed_vs_roving_demo(n: usize, p: usize, window: usize, seed: u64) -> Result<FixedVsRovingReport> {
    if n == 0 || !(1..=4).contains(&p) || !(1..=4).contains(&window) {
        return Err(Error::InvalidInput("demo needs n >= 1, p <= 4 and T <= 4".into()));
    }
    let mut rng = rng_from(seed);
    let sys = draw_system(MatrixSource::DesignedFeedback, n, p, 1, &mut rng)?;
    let phi = crate::model::stack_observability(sys.a_closed(), sys.c(), window)?;
    let x0 = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let capacity = fixed_support_capacity(&phi, p, window);
    let ns = null_space(&phi, RANK_RTOL);
    let invisible_state = (ns.ncols() > 0).then(|| ns.column(0).iter().copied().collect());
    let code = ObservabilityCode::from_matrix(phi.clone(), window).ok();

    let mut case = |pick: &dyn Fn(usize) -> usize| -> DemoCase {
        let mut e = DVector::zeros(p * window);
        for k in 0..window {
            let mag: f64 = rng.sample(StandardNormal);
            e[k * p + pick(k)] = 5.0 * (1.0 + mag.abs());
        }
        let y = &phi * &x0 + &e;
        let fixed = fixed_support_decode(&phi, &y, p, window, capacity.unwrap_or(0));
        let l1 = code.as_ref().and_then(|c| decode_qr(c, &y).ok()).map(|r| r.x0_hat);
        let ok = |x: &Option<DVector<f64>>| x.as_ref().is_some_and(|x| (x - &x0).amax() <= SUCCESS_TOL);
        DemoCase {
            attack: (0..window)
                .map(|k| e.rows(k * p, p).iter().copied().collect())
                .collect(),
            row_support: row_support(&e, p, window),
            fixed_success: ok(&fixed),
            l1_success: ok(&l1),
            fixed_estimate: fixed.map(|x| x.iter().copied().collect()),
            l1_estimate: l1.map(|x| x.iter().copied().collect()),
        }
    };
    let cycling = case(&|k| k % p);
    let fixed = case(&|_| 0);
    Ok(FixedVsRovingReport {
        n,
        p,
        window,
        x0: x0.iter().copied().collect(),
        fixed_capacity: capacity,
        invisible_state,
        cycling,
        fixed,
    })
}

/// Spearman rank correlation of two equally long samples (average ranks
/// for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        0.0
    } else {
        cov / (sx * sy)
    }
}
