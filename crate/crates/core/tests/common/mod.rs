#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gasnet::adjoint::solve_adjoint;
use gasnet::coupling::{apply_coupling, apply_junction_corrections};
use gasnet::forcing::ForcingField;
use gasnet::integrate::{simulate, Model, Trajectory};
use gasnet::io::{write_forcing_csv, write_j_history_csv, write_trajectory_csv, Selection};
use gasnet::network::{
    junction_defects, BoundaryKind, End, ExteriorPort, Junction, Network, NetworkState, Pipe,
    PortRef, Variable,
};
use gasnet::optimize::{evaluate_objective, steepest_descent, Objective, ObjectiveTerm};
use gasnet::sbp::SbpOperator;
use gasnet::scenarios;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn pipe(id: &str, length: f64, n_points: usize) -> Pipe {
    Pipe {
        id: id.into(),
        length,
        n_points,
        area: 1.0,
    }
}

pub fn single_pipe(length: f64, n_points: usize, bc: BoundaryKind) -> Network {
    Network::new(
        1.0,
        vec![pipe("p", length, n_points)],
        vec![],
        vec![
            ExteriorPort {
                port: PortRef::new(0, End::Start),
                bc,
            },
            ExteriorPort {
                port: PortRef::new(0, End::End),
                bc,
            },
        ],
    )
    .unwrap()
}

/// Three pipes in series with both outer ends closed.
pub fn closed_three_pipes(n_points: usize) -> Network {
    let l = scenarios::PIPE_LENGTH;
    Network::new(
        1.0,
        vec![pipe("I", l, n_points), pipe("II", l, n_points), pipe("III", l, n_points)],
        vec![
            Junction {
                id: "J1".into(),
                ports: vec![PortRef::new(0, End::End), PortRef::new(1, End::Start)],
            },
            Junction {
                id: "J2".into(),
                ports: vec![PortRef::new(1, End::End), PortRef::new(2, End::Start)],
            },
        ],
        vec![
            ExteriorPort {
                port: PortRef::new(0, End::Start),
                bc: BoundaryKind::Closed,
            },
            ExteriorPort {
                port: PortRef::new(2, End::End),
                bc: BoundaryKind::Closed,
            },
        ],
    )
    .unwrap()
}

/// Rest state with a Gaussian density bump `amp exp(-((x - x0)/width)²)` on
/// one pipe. With `moving` the bump carries the momentum of a right-running
/// acoustic wave.
pub fn gaussian_state(
    net: &Network,
    pipe: usize,
    x0: f64,
    width: f64,
    amp: f64,
    moving: bool,
) -> NetworkState {
    let mut q = net.uniform_state(1.0, 0.0);
    let c = net.sound_speed();
    let p = net.pipes()[pipe].clone();
    let (rho_a, m_a) = q.pipe_mut(net, pipe);
    for i in 0..p.n_points {
        let s = (p.x(i) - x0) / width;
        let d = amp * (-s * s).exp();
        rho_a[i] = p.area * (1.0 + d);
        if moving {
            m_a[i] = p.area * c * d;
        }
    }
    q
}

pub struct ConservationReport {
    pub mass_drift: f64,
    pub max_density_spread: f64,
    pub max_kirchhoff: f64,
    pub trajectory: Trajectory,
    pub model: Model,
}

pub fn conservation_run(n_points: usize, steps: usize) -> ConservationReport {
    let net = closed_three_pipes(n_points);
    let q0 = gaussian_state(&net, 1, 0.5 * scenarios::PIPE_LENGTH, 0.6, 0.05, false);
    let model = Model::new(net).unwrap();
    let traj = simulate(&model, &q0, steps, scenarios::CFL, &[]).unwrap();
    let m0 = model.total_mass(&q0);
    let mut mass_drift: f64 = 0.0;
    let mut spread: f64 = 0.0;
    let mut kirchhoff: f64 = 0.0;
    for q in &traj.states {
        mass_drift = mass_drift.max((model.total_mass(q) - m0).abs() / m0);
        for d in junction_defects(model.network(), q).unwrap() {
            spread = spread.max(d.density_spread);
            kirchhoff = kirchhoff.max(d.kirchhoff_defect.abs());
        }
    }
    ConservationReport {
        mass_drift,
        max_density_spread: spread,
        max_kirchhoff: kirchhoff,
        trajectory: traj,
        model,
    }
}

/// Worst relative defect of the SBP identities over `trials` random pairs.
pub fn sbp_identity_defect(n: usize, trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let dx = 1.0 / (n as f64 - 1.0);
    let op = SbpOperator::second_order(n, dx).unwrap();
    (0..trials)
        .map(|_| {
            let u = random_vec(&mut r, n);
            let v = random_vec(&mut r, n);
            op.identity_residuals(&u, &v).unwrap().max()
        })
        .fold(0.0, f64::max)
}

/// Compares `(I + C) x` with the per-junction formulas on random vectors.
/// Returns the worst relative difference and whether every nonzero of `C`
/// sits on an endpoint DOF.
pub fn coupling_equivalence(net: &Network, trials: usize, seed: u64) -> (f64, bool) {
    let model = Model::new(net.clone()).unwrap();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_vec(&mut r, net.dof());
        let a = apply_coupling(model.coupling(), &x).unwrap();
        let mut b = x.clone();
        apply_junction_corrections(net, model.operators(), &mut b).unwrap();
        let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - q).abs() / scale);
        }
    }
    let endpoint = |i: usize| {
        let (p, _, k) = net.locate(i).unwrap();
        k == 0 || k == net.pipes()[p].n_points - 1
    };
    let sparse_ok = model
        .coupling()
        .entries()
        .iter()
        .all(|&(row, col, _)| endpoint(row) && endpoint(col));
    (worst, sparse_ok)
}

/// Outcome of the finite-difference and Taylor checks of the gradient.
pub struct GradientReport {
    pub max_rel_error: f64,
    pub samples: usize,
    pub taylor_orders: Vec<f64>,
}

fn baseline_control(control: &ForcingField) -> ForcingField {
    let mut base = control.clone();
    for pf in base.pipes_mut() {
        let (steps, n) = pf.r_rho.dim();
        for k in 0..steps {
            for i in 0..n {
                pf.r_rho[(k, i)] = 0.01 * pf.theta[i] * (k as f64 * 0.05).sin();
                pf.r_m[(k, i)] = 0.01 * pf.theta[i] * (i as f64 * 0.1).cos();
            }
        }
    }
    base
}

/// Gradient test on the shortened E1 problem (N = 100, 200 steps).
///
/// Samples are drawn at random among the space-time points of pipe I where
/// the gradient density is at least a tenth of its maximum (the influence
/// region); the finite difference perturbs `r` by a scaled discrete delta.
pub fn gradient_check(samples: usize, seed: u64) -> GradientReport {
    let s = scenarios::build_e1_sized(100, 200).unwrap();
    let p = &s.problem;
    let base = baseline_control(&p.control);
    let (j0, g) = p.value_and_gradient(&base).unwrap();
    let pg = g.get(0).unwrap();
    let (steps, n) = pg.g_r_rho.dim();
    let w = &p.model.quadrature_weights()[..n];
    let gmax = g.max_abs();

    let mut candidates = Vec::new();
    for k in 0..steps {
        for i in 0..n {
            if pg.g_r_rho[(k, i)].abs() >= 0.1 * gmax {
                candidates.push((k, i, 0));
            }
            if pg.g_r_m[(k, i)].abs() >= 0.1 * gmax {
                candidates.push((k, i, 1));
            }
        }
    }
    assert!(candidates.len() >= samples, "influence region too small");
    let mut r = rng(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..samples {
        let (k, i, var) = candidates[r.gen_range(0..candidates.len())];
        let eps = 1e-4;
        let shifted = |sign: f64| {
            let mut c = base.clone();
            let pf = &mut c.pipes_mut()[0];
            let arr = if var == 0 { &mut pf.r_rho } else { &mut pf.r_m };
            arr[(k, i)] += sign * eps;
            evaluate_objective(&p.model, &p.forward(&c).unwrap(), &p.objective).unwrap()
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps) / (g.dt * w[i]);
        let ad = if var == 0 { pg.g_r_rho[(k, i)] } else { pg.g_r_m[(k, i)] };
        max_rel = max_rel.max((fd - ad).abs() / ad.abs());
    }

    let mut dir = base.clone();
    for pf in dir.pipes_mut() {
        let theta = pf.theta.clone();
        for ((k, i), v) in pf.r_rho.indexed_iter_mut() {
            *v = 0.02 * theta[i] * (0.3 * i as f64 + 0.11 * k as f64).sin();
        }
        for ((k, i), v) in pf.r_m.indexed_iter_mut() {
            *v = 0.02 * theta[i] * (0.17 * i as f64 - 0.07 * k as f64).cos();
        }
    }
    let slope = g.dot(&p.model, &dir).unwrap();
    let remainder = |h: f64| {
        let mut c = base.clone();
        for (pf, d) in c.pipes_mut().iter_mut().zip(dir.pipes()) {
            pf.r_rho.scaled_add(h, &d.r_rho);
            pf.r_m.scaled_add(h, &d.r_m);
        }
        let j = evaluate_objective(&p.model, &p.forward(&c).unwrap(), &p.objective).unwrap();
        (j - j0 - h * slope).abs()
    };
    let hs = [1.0, 0.5, 0.25, 0.125];
    let rs: Vec<f64> = hs.iter().map(|&h| remainder(h)).collect();
    let taylor_orders = rs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    GradientReport {
        max_rel_error: max_rel,
        samples,
        taylor_orders,
    }
}

/// Incident and residual amplitude of a right-running density pulse that
/// leaves a single non-reflecting pipe through its end.
pub fn direct_reflection() -> (f64, f64) {
    let length = 10.0;
    let net = single_pipe(length, 401, BoundaryKind::NonReflecting);
    let amp = 1e-2;
    let q0 = gaussian_state(&net, 0, 0.5 * length, 0.5, amp, true);
    let model = Model::new(net).unwrap();
    let dt = gasnet::dynamics::cfl_timestep(model.network(), &q0, scenarios::CFL).unwrap();
    let steps = (length / dt).ceil() as usize;
    let traj = simulate(&model, &q0, steps, scenarios::CFL, &[]).unwrap();
    let dev = |q: &NetworkState| {
        q.pipe(model.network(), 0)
            .0
            .iter()
            .fold(0.0_f64, |m, v| m.max((v - 1.0).abs()))
    };
    (amp, dev(traj.states.last().unwrap()))
}

/// Same experiment for the adjoint system: a multiplier pulse created in
/// the middle of the pipe at the last step runs backward in time through
/// both non-reflecting ends.
pub fn adjoint_reflection() -> (f64, f64) {
    let length = 10.0;
    let n = 401;
    let net = single_pipe(length, n, BoundaryKind::NonReflecting);
    let q0 = net.uniform_state(1.0, 0.0);
    let model = Model::new(net.clone()).unwrap();
    let dt = gasnet::dynamics::cfl_timestep(&net, &q0, scenarios::CFL).unwrap();
    let steps = (length / dt).ceil() as usize;
    let traj = simulate(&model, &q0, steps, scenarios::CFL, &[]).unwrap();
    let p = &net.pipes()[0];
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let s = (p.x(i) - 0.5 * length) / 0.5;
            (-s * s).exp()
        })
        .collect();
    let mut temporal = vec![0.0; steps];
    temporal[steps - 1] = 1.0;
    let obj = Objective::new(
        &net,
        vec![ObjectiveTerm {
            pipe: 0,
            target: vec![0.0; n],
            sigma,
        }],
        temporal,
    )
    .unwrap();
    let adj = solve_adjoint(&model, &traj, &[], &obj).unwrap();
    let amp = |q: &NetworkState| {
        q.pipe(&net, 0)
            .0
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    };
    let lag = (2.5 / dt).round() as usize;
    (amp(&adj.states[steps - 1 - lag]), amp(&adj.states[0]))
}

/// Runs the conservation case and E1 descent, writing their CSV products
/// into `dir`.
pub fn deterministic_products(dir: &Path, e1_iters: usize) {
    let run = conservation_run(200, 1000);
    let sel = Selection {
        pipes: None,
        stride: 10,
    };
    write_trajectory_csv(&run.trajectory, run.model.network(), &sel, dir.join("conservation.csv"))
        .unwrap();
    let mut s = scenarios::build_e1().unwrap();
    s.options.max_iters = e1_iters;
    let res = steepest_descent(&s.problem, s.options).unwrap();
    let net = s.network();
    write_j_history_csv(&res.j_history, dir.join("j_history.csv")).unwrap();
    write_forcing_csv(&res.forcing, net, res.trajectory.dt, 10, dir.join("forcing.csv")).unwrap();
    write_trajectory_csv(&res.trajectory, net, &sel, dir.join("e1_trajectory.csv")).unwrap();
}

pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

pub fn port_value(net: &Network, q: &NetworkState, pipe: usize, end: End, var: Variable) -> f64 {
    q.values[net.port_index(PortRef::new(pipe, end), var)]
}

