//! Command-line front end: `simulate`, `optimize` and `validate`.
//!
//! Exit codes: 0 on success, 1 on numerical or output failures, 2 on usage
//! errors (bad flags, unknown scenario, unreadable or malformed network
//! file).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::integrate::{simulate, Model, Trajectory};
use crate::io::{
    write_coupling_csv, write_forcing_csv, write_j_history_csv, write_junction_fluxes_csv,
    write_series_csv, write_trajectory_csv, Selection,
};
use crate::network::{parse_network, validate_initial_state, Network, NetworkState};
use crate::optimize::{steepest_descent_with, DescentOptions, Objective};
use crate::scenarios::{self, Scenario};

/// Environment variable holding the worker count (default: all cores).
pub const THREADS_ENV: &str = "GASNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gasnet", version, about = "Gas network simulation and adjoint-based control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward simulation; writes trajectory, junction fluxes and the coupling matrix.
    Simulate(CommonArgs),
    /// Steepest-descent optimization of a scenario's control forcing.
    Optimize(OptimizeArgs),
    /// Checks the initial coupling conditions and the SBP identities.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Built-in scenario (`e1` or `e2`).
    #[arg(long, conflicts_with = "network", required_unless_present = "network")]
    scenario: Option<String>,
    /// JSON network description.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Number of time steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write every `stride`-th time level.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Amplitude of a Gaussian density bump in the middle of the first pipe
    /// (network files only; the default is a rest state).
    #[arg(long, default_value_t = 0.0)]
    bump: f64,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "alpha-s")]
    alpha_s: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
}

const DEFAULT_NETWORK_STEPS: usize = 1000;

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other),
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn thread_pool() -> std::result::Result<rayon::ThreadPool, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| e.to_string())
}

fn dispatch(cmd: Command) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Simulate(a) => run_simulate(&a),
        Command::Optimize(a) => run_optimize(&a),
        Command::Validate(a) => run_validate(&a),
    }
}

fn load_scenario(name: &str, a: &CommonArgs) -> Result<Scenario> {
    let mut s = match a.steps {
        None => scenarios::build_scenario(name)?,
        Some(steps) => match name.to_ascii_lowercase().as_str() {
            "e1" => scenarios::build_e1_sized(200, steps)?,
            "e2" => scenarios::build_e2_sized(200, steps)?,
            other => {
                return Err(Error::invalid(format!(
                    "unknown scenario `{other}` (expected e1 or e2)"
                )))
            }
        },
    };
    if let Some(cfl) = a.cfl {
        s.problem.cfl = cfl;
    }
    Ok(s)
}

fn load_network(path: &Path) -> std::result::Result<Network, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_network(&text)?)
}

fn bump_state(net: &Network, amp: f64) -> NetworkState {
    let mut q = net.uniform_state(scenarios::RHO_REF, 0.0);
    if amp != 0.0 {
        let p = &net.pipes()[0];
        let width = 0.05 * p.length;
        let (rho_a, _) = q.pipe_mut(net, 0);
        for (i, v) in rho_a.iter_mut().enumerate() {
            let s = (p.x(i) - 0.5 * p.length) / width;
            *v = p.area * scenarios::RHO_REF * (1.0 + amp * (-s * s).exp());
        }
    }
    q
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_run(
    dir: &Path,
    model: &Model,
    traj: &Trajectory,
    stride: usize,
    suffix: &str,
) -> Result<()> {
    let net = model.network();
    let sel = Selection {
        pipes: None,
        stride,
    };
    write_trajectory_csv(traj, net, &sel, dir.join(format!("trajectory{suffix}.csv")))?;
    write_junction_fluxes_csv(traj, net, stride, dir.join(format!("junction_fluxes{suffix}.csv")))
}

fn integrand(model: &Model, traj: &Trajectory, obj: &Objective) -> Vec<f64> {
    (0..traj.steps())
        .map(|n| obj.instantaneous(model, &traj.states[n], n))
        .collect()
}

fn run_simulate(a: &CommonArgs) -> std::result::Result<i32, Failure> {
    if a.stride == 0 {
        return Err(Failure::Usage("--stride must be at least 1".into()));
    }
    let (model, traj) = if let Some(name) = &a.scenario {
        let s = load_scenario(name, a)?;
        info!(
            "simulating scenario {} ({} steps, cfl {})",
            s.name, s.problem.steps, s.problem.cfl
        );
        let traj = s.problem.forward(&s.problem.control)?;
        (s.problem.model, traj)
    } else {
        let net = load_network(a.network.as_deref().unwrap())?;
        let q0 = bump_state(&net, a.bump);
        let steps = a.steps.unwrap_or(DEFAULT_NETWORK_STEPS);
        let cfl = a.cfl.unwrap_or(scenarios::CFL);
        let model = Model::new(net)?;
        info!("simulating network file ({steps} steps, cfl {cfl})");
        let traj = simulate(&model, &q0, steps, cfl, &[])?;
        (model, traj)
    };
    prepare_out(&a.out)?;
    write_run(&a.out, &model, &traj, a.stride, "")?;
    write_coupling_csv(model.coupling(), a.out.join("coupling.csv"))?;
    write_text(&a.out.join("network.json"), &model.network().to_json())?;
    let q_end = traj.states.last().unwrap();
    let m0 = model.total_mass(&traj.states[0]);
    println!("steps      {}", traj.steps());
    println!("dt         {:.6e}", traj.dt);
    println!("mass drift {:.3e}", (model.total_mass(q_end) - m0).abs() / m0.abs());
    println!("output     {}", a.out.display());
    Ok(0)
}

fn run_optimize(a: &OptimizeArgs) -> std::result::Result<i32, Failure> {
    let c = &a.common;
    if c.stride == 0 {
        return Err(Failure::Usage("--stride must be at least 1".into()));
    }
    let Some(name) = &c.scenario else {
        if let Some(p) = &c.network {
            if !p.exists() {
                return Err(Failure::Usage(format!("cannot read {}", p.display())));
            }
        }
        return Err(Failure::Usage(
            "optimize needs --scenario; network files carry no objective".into(),
        ));
    };
    let s = load_scenario(name, c)?;
    let opts = DescentOptions {
        alpha_s: a.alpha_s.unwrap_or(s.options.alpha_s),
        tol: a.tol.unwrap_or(s.options.tol),
        max_iters: a.max_iters.unwrap_or(s.options.max_iters),
    };
    info!(
        "optimizing scenario {} ({} steps, alpha_s {}, tol {:e}, max_iters {})",
        s.name, s.problem.steps, opts.alpha_s, opts.tol, opts.max_iters
    );
    let mut j1 = None;
    let result = steepest_descent_with(&s.problem, opts, |it, j| {
        let first = *j1.get_or_insert(j);
        let rel = if first > 0.0 { j / first } else { 0.0 };
        info!("iteration {it:>3}  J = {j:.6e}  J/J1 = {rel:.3e}");
    })
    .map_err(|e| Failure::Run(with_context(e, "optimization")))?;
    if !result.converged {
        warn!(
            "stopping criterion not met after {} iterations (last {:.3e}, tol {:e})",
            result.iterations, result.criterion, opts.tol
        );
    }

    let model = s.model();
    let uncontrolled = s.problem.forward(&s.problem.control)?;
    prepare_out(&c.out)?;
    write_j_history_csv(&result.j_history, c.out.join("j_history.csv"))?;
    write_forcing_csv(
        &result.forcing,
        model.network(),
        result.trajectory.dt,
        c.stride,
        c.out.join("forcing.csv"),
    )?;
    write_run(&c.out, model, &result.trajectory, c.stride, "")?;
    write_junction_fluxes_csv(
        &uncontrolled,
        model.network(),
        c.stride,
        c.out.join("junction_fluxes_uncontrolled.csv"),
    )?;
    let obj = &s.problem.objective;
    write_series_csv(
        "J_t",
        &integrand(model, &result.trajectory, obj),
        result.trajectory.dt,
        c.out.join("objective_integrand.csv"),
    )?;
    write_series_csv(
        "J_t",
        &integrand(model, &uncontrolled, obj),
        uncontrolled.dt,
        c.out.join("objective_integrand_uncontrolled.csv"),
    )?;

    let first = result.j_history[0];
    let last = *result.j_history.last().unwrap();
    println!("iterations {}", result.iterations);
    println!("converged  {}", result.converged);
    println!("criterion  {:.3e}", result.criterion);
    println!("J_1        {first:.6e}");
    println!("J_final    {last:.6e}");
    if first > 0.0 {
        println!("J/J_1      {:.3e}", last / first);
    }
    println!("output     {}", c.out.display());
    Ok(0)
}

fn with_context(e: Error, what: &str) -> Error {
    match e {
        Error::StateInvalid(m) => Error::StateInvalid(format!("{what}: {m}")),
        other => other,
    }
}

/// Tolerance of the SBP identity checks run by `validate`.
pub const SBP_TOLERANCE: f64 = 1e-13;

fn run_validate(a: &CommonArgs) -> std::result::Result<i32, Failure> {
    let (model, q0) = if let Some(name) = &a.scenario {
        let s = load_scenario(name, a)?;
        (s.problem.model, s.problem.initial)
    } else {
        let net = load_network(a.network.as_deref().unwrap())?;
        let q0 = bump_state(&net, a.bump);
        (Model::new(net)?, q0)
    };
    let net = model.network();
    let diag = validate_initial_state(net, &q0, 1e-12)?;
    let mut ok = diag.passed;
    for j in &diag.junctions {
        println!(
            "junction {:<8} density spread {:.3e}  kirchhoff defect {:.3e}",
            j.junction, j.density_spread, j.kirchhoff_defect
        );
    }
    let mut seen: Vec<(usize, u64)> = Vec::new();
    for op in model.operators() {
        let key = (op.n_points(), op.dx().to_bits());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let n = op.n_points();
        let u: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
        let v: Vec<f64> = (0..n).map(|i| (0.37 * i as f64 * i as f64 + 0.1).cos()).collect();
        let r = op.identity_residuals(&u, &v)?;
        let pass = r.max() <= SBP_TOLERANCE;
        ok &= pass;
        println!(
            "sbp n={n:<5} dx={:.4e}  ibp {:.1e}  flux {:.1e}  S+S^T-B {:.1e}  {}",
            op.dx(),
            r.integration_by_parts,
            r.flux,
            r.boundary,
            if pass { "ok" } else { "FAILED" }
        );
    }
    println!("{}", if ok { "valid" } else { "invalid" });
    Ok(if ok { 0 } else { 1 })
}
