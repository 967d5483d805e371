//! Linearized quadrotor and two sensor-attack scenarios: a man-in-the-middle
//! observer and a spoofed GPS inside the control loop.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditions::{max_correctable, support_profile, SupportProfile};
use crate::decoder::DecodeMethod;
use crate::design::{
    lqr_gain, modal_guide, perturb_for_security_guided, DesignError, DesignReport, PerturbOptions, PLACEMENT_SEED,
};
use crate::error::{Error, Result};
use crate::kalman::{CombinedEstimator, EstimatorMethod, KalmanState, Propagation, DEFAULT_PRIOR_VARIANCE};
use crate::model::{generate_attacks, AttackPolicy, LtiSystem, NoiseSource};
use crate::rng::{derive_seed, rng_from};

pub const STATES: usize = 10;
pub const INPUTS: usize = 3;
/// State indices of the x, y and z positions.
pub const POSITION_STATES: [usize; 3] = [0, 4, 8];
/// Measured states, in output order: GPS positions, then horizontal
/// velocities, then vertical velocity and the two tilt angles.
pub const MEASURED_STATES: [usize; 8] = [0, 4, 8, 1, 5, 9, 2, 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadrotorParams {
    pub ts: f64,
    pub g: f64,
    pub mass: f64,
    pub k_t: f64,
    pub rot_nat_freq: f64,
    pub rot_damping: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            ts: 0.05,
            g: 9.81,
            mass: 0.65,
            k_t: 0.91,
            rot_nat_freq: 9.0,
            rot_damping: 0.85,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0) || !(self.mass > 0.0) {
            return Err(Error::InvalidInput("ts and mass must be positive".into()));
        }
        if !(self.rot_nat_freq > 0.0) || !(self.rot_damping >= 0.0) {
            return Err(Error::InvalidInput("rotational dynamics must be stable".into()));
        }
        Ok(())
    }

    /// Zero-order-hold discretization of `th'' = w^2 (th_r - th) - 2 z w th'`.
    pub fn rotational_block(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = self.rot_nat_freq;
        let mut aug = DMatrix::<f64>::zeros(3, 3);
        aug[(0, 1)] = 1.0;
        aug[(1, 0)] = -w * w;
        aug[(1, 1)] = -2.0 * self.rot_damping * w;
        aug[(1, 2)] = w * w;
        let m = (aug * self.ts).exp();
        (
            m.view((0, 0), (2, 2)).into_owned(),
            m.view((0, 2), (2, 1)).column(0).into_owned(),
        )
    }

    /// Open-loop state and input matrices.
    pub fn matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (ts, g) = (self.ts, self.g);
        let (at, bt) = self.rotational_block();
        let mut a = DMatrix::<f64>::zeros(STATES, STATES);
        let mut b = DMatrix::<f64>::zeros(STATES, INPUTS);
        for (axis, off) in [0usize, 4].into_iter().enumerate() {
            a[(off, off)] = 1.0;
            a[(off, off + 1)] = ts;
            a[(off, off + 2)] = g * ts * ts / 2.0;
            a[(off + 1, off + 1)] = 1.0;
            a[(off + 1, off + 2)] = g * ts;
            a.view_mut((off + 2, off + 2), (2, 2)).copy_from(&at);
            b[(off + 2, axis)] = bt[0];
            b[(off + 3, axis)] = bt[1];
        }
        a[(8, 8)] = 1.0;
        a[(8, 9)] = ts;
        a[(9, 9)] = 1.0;
        b[(8, 2)] = self.k_t * ts * ts / (2.0 * self.mass);
        b[(9, 2)] = self.k_t * ts / self.mass;
        (a, b)
    }
}

/// Output matrix for 3, 5 or 8 measurements.
pub fn quadrotor_output(n_y: usize) -> Result<DMatrix<f64>> {
    if !matches!(n_y, 3 | 5 | 8) {
        return Err(Error::InvalidInput(format!("n_y must be 3, 5 or 8, got {n_y}")));
    }
    let mut c = DMatrix::zeros(n_y, STATES);
    for (row, &state) in MEASURED_STATES[..n_y].iter().enumerate() {
        c[(row, state)] = 1.0;
    }
    Ok(c)
}

pub fn build_quadrotor(params: &QuadrotorParams, n_y: usize) -> Result<LtiSystem<f64>> {
    params.validate()?;
    let (a, b) = params.matrices();
    LtiSystem::new(a, b, quadrotor_output(n_y)?)
}

/// LQR gain and its security-perturbed counterpart for one output set.
#[derive(Debug, Clone)]
pub struct QuadrotorDesign {
    pub lqr_gain: DMatrix<f64>,
    pub lqr_profile: SupportProfile<f64>,
    pub lqr_q_max: usize,
    pub secure: DesignReport<f64>,
}

impl QuadrotorDesign {
    pub fn gain(&self, choice: FeedbackDesign) -> &DMatrix<f64> {
        match choice {
            FeedbackDesign::Lqr => &self.lqr_gain,
            FeedbackDesign::Secure => &self.secure.gain,
        }
    }
}

/// Diagonal LQR weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrWeights {
    pub position: f64,
    pub velocity: f64,
    /// Tilt angles and their rates.
    pub attitude: f64,
    pub input: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            position: 1000.0,
            velocity: 100.0,
            attitude: 1.0,
            input: 0.01,
        }
    }
}

impl LqrWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.position, self.velocity, self.attitude]
            .iter()
            .any(|w| !(*w >= 0.0))
            || !(self.input > 0.0)
        {
            return Err(Error::InvalidInput(
                "LQR weights must be nonnegative, input weight positive".into(),
            ));
        }
        Ok(())
    }

    pub fn state_weight(&self) -> DMatrix<f64> {
        let mut q = DVector::from_element(STATES, self.attitude);
        for i in POSITION_STATES {
            q[i] = self.position;
        }
        for i in [1, 5, 9] {
            q[i] = self.velocity;
        }
        DMatrix::from_diagonal(&q)
    }
}

pub fn quadrotor_lqr(sys: &LtiSystem<f64>, weights: &LqrWeights) -> Result<DMatrix<f64>> {
    weights.validate()?;
    lqr_gain(
        sys.a_open(),
        sys.b(),
        &weights.state_weight(),
        &(DMatrix::identity(INPUTS, INPUTS) * weights.input),
        1e-12,
    )
}

/// Default spread between base poles.
pub const BASE_POLE_SPREAD: f64 = 0.01;

/// LQR design and its security perturbation: poles start from the LQR
/// spectrum and eigenvectors are steered toward the LQR modes.
pub fn design_quadrotor(sys: &LtiSystem<f64>, weights: &LqrWeights, max_shift: f64) -> Result<QuadrotorDesign> {
    design_quadrotor_mixed(sys, weights, max_shift, GUIDE_MIX)
}

/// Weight of the seeded random component added to each LQR mode target.
pub const GUIDE_MIX: f64 = 0.01;

/// [`design_quadrotor`] with an explicit random weight `mix` on the targets.
pub fn design_quadrotor_mixed(
    sys: &LtiSystem<f64>,
    weights: &LqrWeights,
    max_shift: f64,
    mix: f64,
) -> Result<QuadrotorDesign> {
    let lqr = quadrotor_lqr(sys, weights)?;
    let closed = sys.a_open() + sys.b() * &lqr;
    let lqr_profile = support_profile(&closed, sys.c())?;
    let lqr_q_max = max_correctable(&lqr_profile, sys.p());
    let (base, mut guide) = modal_guide(sys.a_open(), sys.b(), &lqr, BASE_POLE_SPREAD)?;
    let mut rng = rng_from(PLACEMENT_SEED);
    for mut col in guide.column_iter_mut() {
        let scale = mix * col.norm() / (col.nrows() as f64).sqrt();
        for v in col.iter_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let secure = match perturb_for_security_guided(
        sys.a_open(),
        sys.b(),
        sys.c(),
        &base,
        Some(&guide),
        max_shift,
        PerturbOptions::default(),
    ) {
        Ok(rep) => rep,
        Err(DesignError::NoImprovement { best }) => *best,
        Err(DesignError::Core(e)) => return Err(e),
    };
    Ok(QuadrotorDesign {
        lqr_gain: lqr,
        lqr_profile,
        lqr_q_max,
        secure,
    })
}

/// Catmull-Rom spline through `waypoints`, sampled at `steps` points.
pub fn spline_path(waypoints: &[[f64; 3]], steps: usize) -> Vec<[f64; 3]> {
    if waypoints.is_empty() || steps == 0 {
        return Vec::new();
    }
    if waypoints.len() == 1 || steps == 1 {
        return vec![waypoints[0]; steps];
    }
    let segs = waypoints.len() - 1;
    let at = |i: isize| waypoints[i.clamp(0, segs as isize) as usize];
    (0..steps)
        .map(|k| {
            let s = k as f64 * segs as f64 / (steps - 1) as f64;
            let i = (s.floor() as usize).min(segs - 1);
            let u = s - i as f64;
            let (p0, p1, p2, p3) = (
                at(i as isize - 1),
                at(i as isize),
                at(i as isize + 1),
                at(i as isize + 2),
            );
            let mut out = [0.0; 3];
            for d in 0..3 {
                out[d] = 0.5
                    * (2.0 * p1[d]
                        + (-p0[d] + p2[d]) * u
                        + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * u * u
                        + (-p0[d] + 3.0 * p1[d] - 3.0 * p2[d] + p3[d]) * u * u * u);
            }
            out
        })
        .collect()
}

pub const DEFAULT_WAYPOINTS: [[f64; 3]; 5] = [
    [0.0, 0.0, 0.0],
    [4.0, 2.0, 1.0],
    [8.0, 0.0, 2.0],
    [4.0, -3.0, 2.0],
    [0.0, 0.0, 1.0],
];

/// Desired state trajectory and its feedforward input: the plant driven by the
/// LQR law toward the sampled spline.
pub fn reference_trajectory(
    sys: &LtiSystem<f64>,
    lqr: &DMatrix<f64>,
    waypoints: &[[f64; 3]],
    steps: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let path = spline_path(waypoints, steps);
    let mut x = DVector::zeros(STATES);
    if let Some(p0) = path.first() {
        for (d, &i) in POSITION_STATES.iter().enumerate() {
            x[i] = p0[d];
        }
    }
    let mut states = Vec::with_capacity(steps);
    let mut inputs = Vec::with_capacity(steps);
    for p in &path {
        let mut target = DVector::zeros(STATES);
        for (d, &i) in POSITION_STATES.iter().enumerate() {
            target[i] = p[d];
        }
        let u = lqr * (&x - target);
        states.push(x.clone());
        x = sys.a_open() * &x + sys.b() * &u;
        inputs.push(u);
    }
    (states, inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackDesign {
    #[default]
    Lqr,
    Secure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Mitm,
    Gps,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mitm" => Ok(Self::Mitm),
            "gps" => Ok(Self::Gps),
            other => Err(Error::Parse(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub params: QuadrotorParams,
    pub n_y: usize,
    pub steps: usize,
    /// Decoder window; 0 means the state dimension.
    pub window: usize,
    pub methods: Vec<EstimatorMethod>,
    /// Feedback of the flown plant.
    pub feedback: FeedbackDesign,
    pub decode_method: DecodeMethod,
    pub attack: AttackPolicy,
    /// Clean steps before the attack sequence begins.
    pub attack_onset: usize,
    pub proc_noise_std: f64,
    /// Noise on the position rows.
    pub meas_noise_std: f64,
    /// Noise on the velocity and attitude rows.
    pub imu_noise_std: f64,
    pub max_shift: f64,
    /// Random weight on the eigenvector targets of the secure design.
    pub guide_mix: f64,
    pub weights: LqrWeights,
    pub waypoints: Vec<[f64; 3]>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::mitm()
    }
}

impl ScenarioConfig {
    /// Ramp on the x position plus Gaussian noise roving over the other
    /// position sensors, five measurements.
    pub fn mitm() -> Self {
        Self {
            params: QuadrotorParams::default(),
            n_y: 5,
            steps: 200,
            window: 0,
            methods: EstimatorMethod::ALL.to_vec(),
            feedback: FeedbackDesign::Lqr,
            decode_method: DecodeMethod::Qr,
            attack: AttackPolicy::RampPlusRovingNoise {
                index: 0,
                slope: 0.05,
                roving: vec![1, 2],
                sigma: 1.0,
            },
            attack_onset: 2 * STATES,
            proc_noise_std: 1e-4,
            meas_noise_std: 1e-3,
            imu_noise_std: 1e-2,
            max_shift: 0.05,
            guide_mix: GUIDE_MIX,
            weights: LqrWeights::default(),
            waypoints: DEFAULT_WAYPOINTS.to_vec(),
            seed: 0,
        }
    }

    /// Sinusoid on the x position plus Gaussian noise roving over the other
    /// position sensors.
    pub fn gps(n_y: usize) -> Self {
        Self {
            n_y,
            methods: vec![EstimatorMethod::Kf, EstimatorMethod::SeKf],
            attack: AttackPolicy::SinusoidPlusRovingNoise {
                index: 0,
                amplitude: 5.0,
                period: 100.0,
                roving: vec![1, 2],
                sigma: 1.0,
            },
            ..Self::mitm()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        quadrotor_output(self.n_y)?;
        if self.steps == 0 || self.methods.is_empty() {
            return Err(Error::InvalidInput("need at least one step and one method".into()));
        }
        self.weights.validate()?;
        if self.proc_noise_std < 0.0 || self.meas_noise_std < 0.0 || self.imu_noise_std < 0.0 {
            return Err(Error::InvalidInput("noise levels must be nonnegative".into()));
        }
        Ok(())
    }

    fn window(&self) -> usize {
        if self.window == 0 {
            STATES
        } else {
            self.window
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTrace {
    pub method: EstimatorMethod,
    /// Path actually flown (identical across methods when the estimate is not
    /// in the loop).
    pub true_path: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
    pub attack_estimates: Vec<Vec<f64>>,
    /// Per-axis position RMSE: estimation error for the observer scenario,
    /// tracking error against the desired path for the spoofing scenario.
    pub rmse_axes: [f64; 3],
    pub rmse: f64,
    /// RMSE of the attack estimate over the decoded steps.
    pub attack_rmse: f64,
    pub decoder_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub n_y: usize,
    pub window: usize,
    pub q_max: usize,
    pub desired_path: Vec<Vec<f64>>,
    pub true_path: Vec<Vec<f64>>,
    pub attacks: Vec<Vec<f64>>,
    pub methods: Vec<MethodTrace>,
}

impl ScenarioResult {
    pub fn method(&self, m: EstimatorMethod) -> Option<&MethodTrace> {
        self.methods.iter().find(|t| t.method == m)
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// One row per (method, step): true state, estimate, attack and its estimate.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["method".to_string(), "t".to_string()];
        header.extend((0..STATES).map(|i| format!("x{i}")));
        header.extend((0..STATES).map(|i| format!("xhat{i}")));
        header.extend((0..3).map(|i| format!("ref{i}")));
        header.extend((0..self.n_y).map(|i| format!("e{i}")));
        header.extend((0..self.n_y).map(|i| format!("ehat{i}")));
        w.write_record(&header).map_err(io)?;
        for tr in &self.methods {
            for t in 0..tr.estimates.len() {
                let mut row = vec![tr.method.name().to_string(), t.to_string()];
                let fields = tr.true_path[t]
                    .iter()
                    .chain(&tr.estimates[t])
                    .chain(&self.desired_path[t])
                    .chain(&self.attacks[t])
                    .chain(&tr.attack_estimates[t]);
                row.extend(fields.map(|v| v.to_string()));
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `result.json` and `trace.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join("result.json"), self.to_json_string()?).map_err(|e| Error::Io(e.to_string()))?;
        let f = std::fs::File::create(dir.join("trace.csv")).map_err(|e| Error::Io(e.to_string()))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

struct Setup {
    plant: LtiSystem<f64>,
    /// `(A_o + B G, B)` with the plant's noise, as seen by the estimators.
    observer: LtiSystem<f64>,
    gain: DMatrix<f64>,
    q_max: usize,
    ref_states: Vec<DVector<f64>>,
    /// Known exogenous input `u_r - G x_r` of the closed-loop model.
    exo: Vec<DVector<f64>>,
    attacks: Vec<DVector<f64>>,
    proc_noise: Vec<DVector<f64>>,
    meas_noise: Vec<DVector<f64>>,
}

fn setup(cfg: &ScenarioConfig) -> Result<Setup> {
    cfg.validate()?;
    let n_y = cfg.n_y;
    let qn = DMatrix::identity(STATES, STATES) * cfg.proc_noise_std.powi(2);
    let mut rn = DMatrix::identity(n_y, n_y) * cfg.meas_noise_std.powi(2);
    for i in POSITION_STATES.len()..n_y {
        rn[(i, i)] = cfg.imu_noise_std.powi(2);
    }
    let plant = build_quadrotor(&cfg.params, n_y)?.with_noise(qn.clone(), rn.clone())?;
    let design = design_quadrotor_mixed(&plant, &cfg.weights, cfg.max_shift, cfg.guide_mix)?;
    let gain = design.gain(cfg.feedback).clone();
    let a_c = plant.a_open() + plant.b() * &gain;
    let q_max = max_correctable(&support_profile(&a_c, plant.c())?, n_y);
    let observer = LtiSystem::new(a_c, plant.b().clone(), plant.c().clone())?.with_noise(qn.clone(), rn.clone())?;
    let (ref_states, ref_inputs) = reference_trajectory(&plant, &design.lqr_gain, &cfg.waypoints, cfg.steps);
    let exo = ref_inputs.iter().zip(&ref_states).map(|(u, x)| u - &gain * x).collect();
    let onset = cfg.attack_onset.min(cfg.steps);
    let mut attacks = vec![DVector::zeros(n_y); onset];
    if onset < cfg.steps {
        let seq = generate_attacks::<f64>(&cfg.attack, n_y, cfg.steps - onset, derive_seed(cfg.seed, &[1]))?;
        attacks.extend(seq.vectors().iter().cloned());
    }
    let mut rng = rng_from(derive_seed(cfg.seed, &[2]));
    let (wsrc, vsrc) = (NoiseSource::new(&qn), NoiseSource::new(&rn));
    let mut proc_noise = Vec::with_capacity(cfg.steps);
    let mut meas_noise = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        meas_noise.push(vsrc.sample(&mut rng));
        proc_noise.push(wsrc.sample(&mut rng));
    }
    Ok(Setup {
        plant,
        observer,
        gain,
        q_max,
        ref_states,
        exo,
        attacks,
        proc_noise,
        meas_noise,
    })
}

fn positions(x: &DVector<f64>) -> [f64; 3] {
    POSITION_STATES.map(|i| x[i])
}

fn rmse_per_axis(a: &[DVector<f64>], b: &[[f64; 3]], from: usize) -> ([f64; 3], f64) {
    let mut acc = [0.0; 3];
    let count = a.len().saturating_sub(from).max(1) as f64;
    for (x, r) in a.iter().zip(b).skip(from) {
        let p = positions(x);
        for d in 0..3 {
            acc[d] += (p[d] - r[d]).powi(2);
        }
    }
    let axes = acc.map(|s| (s / count).sqrt());
    let total = (acc.iter().sum::<f64>() / count).sqrt();
    (axes, total)
}

fn attack_rmse(est: &[DVector<f64>], truth: &[DVector<f64>], from: usize) -> f64 {
    let count = est.len().saturating_sub(from).max(1) as f64;
    let s: f64 = est
        .iter()
        .zip(truth)
        .skip(from)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    (s / count).sqrt()
}

fn to_rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

/// Runs one estimator over the scenario. With `in_loop` the plant flies
/// `u = u_r + G (x_hat - x_r)`; otherwise it uses its true state.
fn run_method(cfg: &ScenarioConfig, s: &Setup, method: EstimatorMethod, in_loop: bool) -> Result<MethodRun> {
    let window = cfg.window();
    let filter_model = if in_loop { &s.plant } else { &s.observer };
    let est = CombinedEstimator::new(
        filter_model,
        window,
        cfg.decode_method,
        Propagation::Driven,
        KalmanState::new(
            s.ref_states[0].clone(),
            DMatrix::identity(STATES, STATES) * DEFAULT_PRIOR_VARIANCE,
        )?,
    )?
    .with_decoder_model(
        s.observer.a_open().clone(),
        s.observer.b().clone(),
        s.observer.c().clone(),
        cfg.decode_method,
    )?;
    let mut est = if method == EstimatorMethod::Kf {
        est.plain()
    } else {
        est
    };
    let mut u_applied = DVector::zeros(INPUTS);
    let mut x = s.ref_states[0].clone();
    let mut states = Vec::with_capacity(cfg.steps);
    let mut xs = Vec::with_capacity(cfg.steps);
    let mut es = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let y = s.plant.c() * &x + &s.attacks[t] + &s.meas_noise[t];
        let u_prev = if t > 0 {
            s.exo[t - 1].clone()
        } else {
            DVector::zeros(INPUTS)
        };
        let (mean, e_hat) = if in_loop {
            est.step_split(&s.plant, &u_applied, &u_prev, &y)?
        } else {
            est.step(&s.observer, &u_prev, &y)?
        };
        let x_hat = match method {
            EstimatorMethod::Se => est.secure_state().cloned().unwrap_or(mean),
            _ => mean,
        };
        let fb = if in_loop { &x_hat } else { &x };
        let u = &s.exo[t] + &s.gain * fb;
        u_applied = u.clone();
        states.push(x.clone());
        xs.push(x_hat);
        es.push(e_hat);
        x = s.plant.a_open() * &x + s.plant.b() * u + &s.proc_noise[t];
    }
    Ok(MethodRun {
        states,
        estimates: xs,
        attack_estimates: es,
        decoder_failures: est.decoder_failures(),
    })
}

struct MethodRun {
    states: Vec<DVector<f64>>,
    estimates: Vec<DVector<f64>>,
    attack_estimates: Vec<DVector<f64>>,
    decoder_failures: usize,
}

fn trace(method: EstimatorMethod, run: MethodRun, axes: ([f64; 3], f64), attack_rmse: f64) -> MethodTrace {
    MethodTrace {
        method,
        true_path: to_rows(&run.states),
        estimates: to_rows(&run.estimates),
        attack_estimates: to_rows(&run.attack_estimates),
        rmse_axes: axes.0,
        rmse: axes.1,
        attack_rmse,
        decoder_failures: run.decoder_failures,
    }
}

/// Observer scenario: the plant tracks the desired path with its true state,
/// and each estimator reconstructs the path from the corrupted outputs.
/// Estimators model the closed loop `(A_o + B G, B)` driven by the known
/// reference feedforward `u_r - G x_r`. RMSE is the position estimation error
/// after the first window.
pub fn run_mitm(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let s = setup(cfg)?;
    let window = cfg.window();
    let mut traces = Vec::new();
    for &method in &cfg.methods {
        let run = run_method(cfg, &s, method, false)?;
        let truth: Vec<[f64; 3]> = run.states.iter().map(positions).collect();
        let axes = rmse_per_axis(&run.estimates, &truth, window);
        let atk = attack_rmse(&run.attack_estimates, &s.attacks, window);
        traces.push(trace(method, run, axes, atk));
    }
    finish(cfg, &s, Scenario::Mitm, traces)
}

/// Spoofing scenario: the plant flies `u = u_r + G (x_hat - x_r)` with the
/// estimate under test in the loop, using the same closed-loop model as the
/// observer scenario. RMSE is the position tracking error against the
/// desired path over the whole run.
pub fn run_gps_spoof(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let s = setup(cfg)?;
    let desired: Vec<[f64; 3]> = s.ref_states.iter().map(positions).collect();
    let mut traces = Vec::new();
    for &method in &cfg.methods {
        let run = run_method(cfg, &s, method, true)?;
        let axes = rmse_per_axis(&run.states, &desired, 0);
        let atk = attack_rmse(&run.attack_estimates, &s.attacks, cfg.window());
        traces.push(trace(method, run, axes, atk));
    }
    finish(cfg, &s, Scenario::Gps, traces)
}

fn finish(cfg: &ScenarioConfig, s: &Setup, scenario: Scenario, methods: Vec<MethodTrace>) -> Result<ScenarioResult> {
    Ok(ScenarioResult {
        scenario,
        n_y: cfg.n_y,
        window: cfg.window(),
        q_max: s.q_max,
        desired_path: s.ref_states.iter().map(|x| positions(x).to_vec()).collect(),
        true_path: methods.first().map(|t| t.true_path.clone()).unwrap_or_default(),
        attacks: to_rows(&s.attacks),
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gravity_decouples_attitude() {
        let p = QuadrotorParams {
            g: 0.0,
            ..Default::default()
        };
        let (a, _) = p.matrices();
        for off in [0, 4] {
            for j in [off + 2, off + 3] {
                assert_eq!(a[(off, j)], 0.0);
                assert_eq!(a[(off + 1, j)], 0.0);
            }
        }
    }

    #[test]
    fn short_step_tends_to_identity() {
        let p = QuadrotorParams {
            ts: 1e-9,
            ..Default::default()
        };
        let (a, _) = p.matrices();
        assert!((a - DMatrix::<f64>::identity(STATES, STATES)).amax() < 1e-6);
    }

    #[test]
    fn spline_hits_waypoints() {
        let path = spline_path(&DEFAULT_WAYPOINTS, 5);
        for (p, w) in path.iter().zip(DEFAULT_WAYPOINTS) {
            for d in 0..3 {
                assert!((p[d] - w[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_sets() {
        assert!(quadrotor_output(4).is_err());
        let c = quadrotor_output(8).unwrap();
        assert_eq!(c.sum(), 8.0);
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(2, 8)], 1.0);
    }
}
