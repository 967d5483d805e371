use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use secest::conditions::{
    check_prop2_rank_sampled, check_prop2_support, max_correctable, q_cap, support_profile, t_bound,
};
use secest::decoder::{decode_direct, decode_qr, DecodeMethod};
use secest::design::{design_report, perturb_for_security, DesignError, PerturbOptions};
use secest::harness::{self, ExperimentConfig, MatrixSource, SuccessRateTable};
use secest::kalman::{CombinedEstimator, EstimatorMethod, KalmanState, Propagation, DEFAULT_PRIOR_VARIANCE};
use secest::l1solve::{basis_pursuit_problem, l1_regression_problem};
use secest::linalg::spectral_radius;
use secest::model::{
    build_observability, generate_attacks, simulate, AttackPolicy, AttackSequence, LtiSystem, ObservabilityCode,
};
use secest::uav::{run_gps_spoof, run_mitm, Scenario, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(
    name = "secest",
    version,
    about = "Secure state estimation under sparse sensor attacks"
)]
struct Cli {
    /// JSON configuration for `uav` or `montecarlo`; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Check result invariants and exit with status 2 on a violation.
    #[arg(long, global = true)]
    self_check: bool,
    /// Print the linear program of each decode to stderr.
    #[arg(long, global = true)]
    dump_lp: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a plant under attack and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Decode the initial state from a window of measurements.
    Decode(DecodeArgs),
    /// Report eigenvector supports, correctable attacks and window bounds.
    Check(CheckArgs),
    /// Search pole placements that maximize eigenvector support.
    Design(DesignArgs),
    /// Run an estimator over a simulated attack and write per-step CSV.
    Track(TrackArgs),
    /// Run a quadrotor attack scenario.
    Uav(UavArgs),
    /// Monte-Carlo recovery rates against the attack budget.
    Montecarlo(MonteCarloArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    system: PathBuf,
    /// Attack policy: a JSON file, inline JSON, `none`, `fixed:<i,j,..>` or `budget:<total>`.
    #[arg(long, default_value = "none")]
    attacks: String,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Initial state as comma-separated values (default: all ones).
    #[arg(long)]
    x0: Option<String>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    system: PathBuf,
    /// CSV with one row of `p` outputs per step.
    #[arg(long)]
    window: PathBuf,
    #[arg(long, default_value = "qr")]
    method: DecodeMethod,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    system: PathBuf,
    /// Window length for the rank checks (default: the recommended window, or n).
    #[arg(long)]
    window: Option<usize>,
    /// Attacks per step to check (default: the correctable maximum).
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value = "text", value_parser = ["text", "json"])]
    format: String,
    /// Random subsets tested when exhaustive checks are too large.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
}

#[derive(Args, Debug)]
struct DesignArgs {
    #[arg(long)]
    system: PathBuf,
    /// Comma-separated base poles, or `auto` for an even spread in the stable band.
    #[arg(long, default_value = "auto")]
    poles: String,
    #[arg(long, default_value_t = 0.05)]
    max_shift: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value = "none")]
    attacks: String,
    #[arg(long, default_value = "se+kf")]
    method: EstimatorMethod,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Decoder window (default: n).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    x0: Option<String>,
    /// Noise variance the filter assumes when the plant file gives none.
    #[arg(long, default_value_t = 1e-6)]
    noise_floor: f64,
}

#[derive(Args, Debug)]
struct UavArgs {
    #[arg(long, default_value = "mitm")]
    scenario: Scenario,
    #[arg(long)]
    ny: Option<usize>,
    /// Comma-separated estimators: kf, se, se+kf.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct MonteCarloArgs {
    /// Comma-separated matrix sources, or `all`.
    #[arg(long, default_value = "designed_feedback")]
    sources: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Budgets as `start:end:step` or a comma-separated list.
    #[arg(long)]
    budgets: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    method: Option<DecodeMethod>,
    /// Also run the fixed-support versus roving-attack demonstration.
    #[arg(long)]
    demo: bool,
}

/// Invariant violations collected during a run.
#[derive(Default)]
struct Checks(Vec<String>);

impl Checks {
    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.0.push(what.into());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(checks) if cli.self_check && !checks.0.is_empty() => {
            for c in &checks.0 {
                eprintln!("invariant violated: {c}");
            }
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<Checks> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut checks = Checks::default();
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a, &mut checks)?,
        Command::Decode(a) => cmd_decode(cli, a, &mut checks)?,
        Command::Check(a) => cmd_check(cli, a, &mut checks)?,
        Command::Design(a) => cmd_design(cli, a, &mut checks)?,
        Command::Track(a) => cmd_track(cli, a, &mut checks)?,
        Command::Uav(a) => cmd_uav(cli, a, &mut checks)?,
        Command::Montecarlo(a) => cmd_montecarlo(cli, a, &mut checks)?,
    }
    Ok(checks)
}

fn load_system(path: &Path) -> Result<LtiSystem<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(LtiSystem::from_json_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow::anyhow!("bad value {t:?}: {e}")))
        .collect()
}

fn initial_state(arg: Option<&str>, n: usize) -> Result<DVector<f64>> {
    match arg {
        None => Ok(DVector::from_element(n, 1.0)),
        Some(s) => {
            let v: Vec<f64> = parse_list(s)?;
            if v.len() != n {
                bail!("x0 has {} entries, the plant has {n} states", v.len());
            }
            Ok(DVector::from_vec(v))
        }
    }
}

/// Builds an attack sequence from a policy or an explicit list of vectors.
fn load_attacks(arg: &str, p: usize, steps: usize, seed: u64) -> Result<AttackSequence<f64>> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg)?
    } else {
        arg.to_string()
    };
    let text = text.trim();
    let policy = if text == "none" {
        AttackPolicy::None
    } else if let Some(rest) = text.strip_prefix("fixed:") {
        AttackPolicy::FixedSupport {
            support: parse_list(rest)?,
            amplitude: secest::model::DEFAULT_ATTACK_AMPLITUDE,
        }
    } else if let Some(rest) = text.strip_prefix("budget:") {
        AttackPolicy::ChangingSupportBudget {
            total: rest.trim().parse()?,
            amplitude: secest::model::DEFAULT_ATTACK_AMPLITUDE,
        }
    } else if text.starts_with('[') {
        let rows: Vec<Vec<f64>> = serde_json::from_str(text).context("parsing attack vectors")?;
        if rows.len() < steps {
            bail!("{} attack vectors for {steps} steps", rows.len());
        }
        let seq = AttackSequence::from_vectors(rows.into_iter().map(DVector::from_vec).collect())?;
        if seq.outputs() != p {
            bail!(
                "attack vectors have {} entries, the plant has {p} outputs",
                seq.outputs()
            );
        }
        return Ok(seq);
    } else {
        serde_json::from_str(text).context("parsing attack policy")?
    };
    Ok(generate_attacks(&policy, p, steps, seed)?)
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, checks: &mut Checks) -> Result<()> {
    let sys = load_system(&a.system)?;
    let seed = cli.seed.unwrap_or(0);
    let x0 = initial_state(a.x0.as_deref(), sys.n())?;
    let attacks = load_attacks(&a.attacks, sys.p(), a.steps, seed)?;
    let traj = simulate(&sys, &x0, &attacks, a.steps, seed)?;
    for t in 0..traj.len() {
        let diff = &traj.corrupted_outputs[t] - &traj.clean_outputs[t] - attacks.vector(t);
        checks.expect(
            diff.amax() <= 1e-9 * (1.0 + traj.corrupted_outputs[t].amax()),
            format!("output at step {t} differs from clean + attack"),
        );
    }
    traj.write_csv(output_writer(cli.out.as_deref())?)?;
    Ok(())
}

/// Reads a measurement window: one row per step, optional header line.
fn read_window(path: &Path, p: usize) -> Result<Vec<DVector<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_list::<f64>(line) {
            Ok(v) if v.len() == p => rows.push(DVector::from_vec(v)),
            Ok(v) => bail!("line {} has {} values, expected {p}", i + 1, v.len()),
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => bail!("line {}: {e}", i + 1),
        }
    }
    if rows.is_empty() {
        bail!("{} holds no measurements", path.display());
    }
    Ok(rows)
}

fn stack(rows: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        rows.iter().map(|r| r.len()).sum(),
        rows.iter().flat_map(|r| r.iter().copied()),
    )
}

fn dump_lp(code: &ObservabilityCode<f64>, y: &DVector<f64>, method: DecodeMethod) -> Result<()> {
    let lp = match method {
        DecodeMethod::Qr => {
            let f = code.q2().transpose();
            basis_pursuit_problem(&f, &(&f * y))?
        }
        DecodeMethod::Direct => l1_regression_problem(code.phi(), y)?,
    };
    eprint!("{}", lp.to_text());
    Ok(())
}

fn cmd_decode(cli: &Cli, a: &DecodeArgs, checks: &mut Checks) -> Result<()> {
    let sys = load_system(&a.system)?;
    let rows = read_window(&a.window, sys.p())?;
    let code = build_observability(&sys, rows.len())?;
    let y = stack(&rows);
    if cli.dump_lp {
        dump_lp(&code, &y, a.method)?;
    }
    let r = match a.method {
        DecodeMethod::Qr => decode_qr(&code, &y)?,
        DecodeMethod::Direct => decode_direct(&code, &y)?,
    };
    let p = sys.p();
    let e_rows: Vec<Vec<f64>> = (0..rows.len())
        .map(|k| r.step_attack(k, p).iter().copied().collect())
        .collect();
    let doc = serde_json::json!({
        "method": match a.method { DecodeMethod::Qr => "qr", DecodeMethod::Direct => "direct" },
        "window": rows.len(),
        "x0_hat": r.x0_hat.iter().collect::<Vec<_>>(),
        "e_hat": e_rows,
        "per_step_supports": r.per_step_supports,
        "residual_l1": r.residual_l1,
        "unique": r.unique,
        "iterations": r.iterations,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    match &a.json_out {
        Some(path) => fs::write(path, &text)?,
        None => println!("{text}"),
    }
    let resid = &y - code.phi() * &r.x0_hat - &r.e_hat;
    checks.expect(
        resid.amax() <= 1e-6 * (1.0 + y.amax()),
        "decoded state and attack do not reproduce the measurements",
    );
    checks.expect(r.x0_hat.iter().all(|v| v.is_finite()), "non-finite state estimate");
    Ok(())
}

fn cmd_check(cli: &Cli, a: &CheckArgs, checks: &mut Checks) -> Result<()> {
    let sys = load_system(&a.system)?;
    let (n, p) = (sys.n(), sys.p());
    let profile = support_profile(sys.a_closed(), sys.c())?;
    let q_max = max_correctable(&profile, p);
    let q = a.q.unwrap_or(q_max);
    let bound = t_bound(&profile, p, q);
    let window = a
        .window
        .or_else(|| bound.as_ref().ok().map(|b| b.t_recommended))
        .unwrap_or(n);
    let code = build_observability(&sys, window)?;
    let seed = cli.seed.unwrap_or(0);
    let rank = check_prop2_rank_sampled(&code, q, a.samples, seed);
    let support_ok = check_prop2_support(&code, q, a.samples, seed);
    checks.expect(q_max <= q_cap(p), "correctable count exceeds the (p-1)/2 cap");
    checks.expect(profile.s.iter().all(|&s| s <= p), "eigenvector support larger than p");

    let doc = serde_json::json!({
        "n": n,
        "p": p,
        "eigenvalues_re": profile.eigvals,
        "eigenvalues_im": profile.eigvals_im,
        "supports": profile.s,
        "distinct_positive": profile.distinct_positive,
        "q_max": q_max,
        "q": q,
        "t_bound": bound.as_ref().ok(),
        "t_bound_error": bound.as_ref().err().map(|e| e.to_string()),
        "window": window,
        "prop2_rank": rank,
        "prop2_support": support_ok,
    });
    let mut w = output_writer(cli.out.as_deref())?;
    if a.format == "json" {
        writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
        return Ok(());
    }
    writeln!(w, "{:>4}  {:>12}  {:>12}  {:>7}", "i", "re", "im", "support")?;
    for i in 0..n {
        writeln!(
            w,
            "{:>4}  {:>12.6}  {:>12.6}  {:>7}",
            i, profile.eigvals[i], profile.eigvals_im[i], profile.s[i]
        )?;
    }
    writeln!(w, "{:<22}{}", "outputs", p)?;
    writeln!(w, "{:<22}{}", "q_max", q_max)?;
    writeln!(w, "{:<22}{}", "checked q", q)?;
    match &bound {
        Ok(b) => {
            writeln!(w, "{:<22}{:.4}", "T*", b.t_star)?;
            writeln!(w, "{:<22}{}", "recommended window", b.t_recommended)?;
        }
        Err(e) => writeln!(w, "{:<22}{}", "T*", e)?,
    }
    writeln!(w, "{:<22}{}", "window", window)?;
    writeln!(
        w,
        "{:<22}{} ({} {} subsets)",
        "rank condition",
        if rank.holds { "holds" } else { "fails" },
        if rank.exhaustive { "all" } else { "sampled" },
        rank.tested
    )?;
    writeln!(
        w,
        "{:<22}{}",
        "support condition",
        if support_ok { "holds" } else { "fails" }
    )?;
    Ok(())
}

fn auto_poles(n: usize) -> Vec<f64> {
    let (lo, hi) = harness::DESIGNED_POLE_RANGE;
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cmd_design(cli: &Cli, a: &DesignArgs, checks: &mut Checks) -> Result<()> {
    let sys = load_system(&a.system)?;
    if sys.m() == 0 {
        bail!("the plant has no inputs to place poles with");
    }
    let base = if a.poles == "auto" {
        auto_poles(sys.n())
    } else {
        parse_list(&a.poles)?
    };
    let opts = PerturbOptions {
        max_iters: a.iters,
        ..Default::default()
    };
    let report = match perturb_for_security(sys.a_open(), sys.b(), sys.c(), &base, a.max_shift, opts) {
        Ok(r) => r,
        Err(DesignError::NoImprovement { best }) => {
            log::warn!("no perturbation improved the supports; reporting the base design");
            *best
        }
        Err(DesignError::Core(e)) => return Err(e.into()),
    };
    let check = design_report(
        sys.a_open(),
        sys.b(),
        sys.c(),
        report.gain.clone(),
        &report.requested_poles,
        &report.requested_poles,
    )?;
    checks.expect(check.q_max == report.q_max, "re-evaluated gain gives a different q_max");
    checks.expect(
        spectral_radius(&(sys.a_open() + sys.b() * &report.gain)) < 1.0,
        "closed loop is not stable",
    );
    checks.expect(report.q_max <= q_cap(sys.p()), "q_max exceeds the (p-1)/2 cap");
    let mut w = output_writer(cli.out.as_deref())?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_track(cli: &Cli, a: &TrackArgs, checks: &mut Checks) -> Result<()> {
    let sys = load_system(&a.system)?;
    let (n, p) = (sys.n(), sys.p());
    let seed = cli.seed.unwrap_or(0);
    let x0 = initial_state(a.x0.as_deref(), n)?;
    let attacks = load_attacks(&a.attacks, p, a.steps, seed)?;
    let traj = simulate(&sys, &x0, &attacks, a.steps, seed)?;
    let window = a.window.unwrap_or(n);
    let floor = |cov: &DMatrix<f64>| {
        if cov.amax() > 0.0 {
            cov.clone()
        } else {
            DMatrix::identity(cov.nrows(), cov.nrows()) * a.noise_floor
        }
    };
    let model = sys
        .clone()
        .with_noise(floor(sys.proc_noise_cov()), floor(sys.meas_noise_cov()))?;
    let prior = KalmanState::new(DVector::zeros(n), DMatrix::identity(n, n) * DEFAULT_PRIOR_VARIANCE)?;
    let mut est = CombinedEstimator::new(&model, window, DecodeMethod::Qr, Propagation::Closed, prior)?;
    if a.method == EstimatorMethod::Kf {
        est = est.plain();
    }
    let u = DVector::zeros(sys.m());

    let mut w = csv_writer(output_writer(cli.out.as_deref())?);
    let mut header = vec!["t".to_string()];
    for (prefix, k) in [("x", n), ("x_hat", n), ("e", p), ("e_hat", p)] {
        header.extend((1..=k).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header)?;
    for t in 0..traj.len() {
        let y = &traj.corrupted_outputs[t];
        let (mean, e_hat) = est.step(&model, &u, y)?;
        let x_hat = match a.method {
            EstimatorMethod::Se => est.secure_state().cloned().unwrap_or(mean),
            _ => mean,
        };
        checks.expect(
            x_hat.iter().all(|v| v.is_finite()),
            format!("non-finite estimate at step {t}"),
        );
        let mut rec = vec![t.to_string()];
        for v in [&traj.states[t], &x_hat, attacks.vector(t), &e_hat] {
            rec.extend(v.iter().map(|x| x.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if est.decoder_failures() > 0 {
        log::warn!("decoder failed on {} steps", est.decoder_failures());
    }
    Ok(())
}

fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::Writer::from_writer(w)
}

fn read_config<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<Option<T>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    })
    .transpose()
}

fn cmd_uav(cli: &Cli, a: &UavArgs, checks: &mut Checks) -> Result<()> {
    let mut cfg = match read_config::<ScenarioConfig>(cli.config.as_deref())? {
        Some(c) => c,
        None => match a.scenario {
            Scenario::Mitm => ScenarioConfig::mitm(),
            Scenario::Gps => ScenarioConfig::gps(a.ny.unwrap_or(3)),
        },
    };
    if let Some(n_y) = a.ny {
        cfg.n_y = n_y;
    }
    if let Some(m) = &a.methods {
        cfg.methods = parse_list(m)?;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let result = match a.scenario {
        Scenario::Mitm => run_mitm(&cfg)?,
        Scenario::Gps => run_gps_spoof(&cfg)?,
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("uav-{}", scenario_name(a.scenario))));
    result.save(&out)?;
    println!(
        "{:<8}{:>10}{:>10}{:>10}{:>10}{:>12}",
        "method", "rmse", "x", "y", "z", "attack"
    );
    for m in &result.methods {
        println!(
            "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>12.4}",
            m.method.name(),
            m.rmse,
            m.rmse_axes[0],
            m.rmse_axes[1],
            m.rmse_axes[2],
            m.attack_rmse
        );
        checks.expect(m.rmse.is_finite(), format!("{} rmse is not finite", m.method));
        checks.expect(
            m.estimates.len() == cfg.steps,
            format!("{} trace is truncated", m.method),
        );
    }
    if a.scenario == Scenario::Mitm {
        let shared = result.methods.windows(2).all(|w| w[0].true_path == w[1].true_path);
        checks.expect(shared, "estimators saw different true paths");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::Mitm => "mitm",
        Scenario::Gps => "gps",
    }
}

fn parse_budgets(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step): (usize, usize, usize) =
                (start.trim().parse()?, end.trim().parse()?, step.trim().parse()?);
            if step == 0 {
                bail!("budget step must be positive");
            }
            Ok((start..=end).step_by(step).collect())
        }
        [_] => parse_list(s),
        _ => bail!("budgets must be start:end:step or a list"),
    }
}

fn check_table(t: &SuccessRateTable, checks: &mut Checks) {
    for r in &t.rows {
        let rate = r.successes as f64 / r.trials as f64;
        checks.expect(
            (r.success_rate - rate).abs() < 1e-12,
            format!("{} budget {}: rate does not match counts", t.source, r.budget),
        );
        checks.expect(
            r.mean_error >= 0.0,
            format!("{} budget {}: negative error", t.source, r.budget),
        );
        if r.budget == 0 {
            checks.expect(r.success_rate == 1.0, format!("{}: failures without attack", t.source));
        }
    }
    let budgets: Vec<f64> = t.rows.iter().map(|r| r.budget as f64).collect();
    let rates: Vec<f64> = t.rows.iter().map(|r| r.success_rate).collect();
    if t.rows.len() > 2 {
        checks.expect(
            harness::spearman(&budgets, &rates) <= 0.0,
            format!("{}: success rate grows with budget", t.source),
        );
    }
}

fn cmd_montecarlo(cli: &Cli, a: &MonteCarloArgs, checks: &mut Checks) -> Result<()> {
    let mut cfg = read_config::<ExperimentConfig>(cli.config.as_deref())?.unwrap_or_default();
    if let Some(v) = a.n {
        cfg.n = v;
        if a.window.is_none() {
            cfg.window = v;
        }
    }
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(b) = &a.budgets {
        cfg.budgets = parse_budgets(b)?;
    }
    if let Some(v) = a.trials {
        cfg.trials_per_point = v;
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let sources: Vec<MatrixSource> = if a.sources == "all" {
        MatrixSource::ALL.to_vec()
    } else {
        parse_list(&a.sources)?
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("montecarlo"));
    fs::create_dir_all(&out)?;
    let tables = harness::run_comparison(&cfg, &sources)?;
    for t in &tables {
        t.save(&out, t.source.name())?;
        check_table(t, checks);
        println!(
            "{} (n={} p={} T={}, correctable budget {})",
            t.source, t.n, t.p, t.window, t.correctable_budget
        );
        for r in &t.rows {
            println!(
                "  budget {:>4}  success {:>6.3}  mean error {:.3e}",
                r.budget, r.success_rate, r.mean_error
            );
        }
    }
    if a.demo {
        let report = harness::run_fixed_vs_roving_demo(2, 3, 3, cfg.seed)?;
        fs::write(out.join("demo.json"), serde_json::to_string_pretty(&report)?)?;
        checks.expect(report.cycling.l1_success, "l1 decoder missed the cycling attack");
        println!(
            "cycling attack: fixed-support decoder {}, l1 decoder {}",
            verdict(report.cycling.fixed_success),
            verdict(report.cycling.l1_success)
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "recovers x0"
    } else {
        "fails"
    }
}
