//! The two reference experiments: three pipes in series (`e1`) and the
//! seven-pipe diamond (`e2`).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::forcing::ForcingField;
use crate::integrate::Model;
use crate::network::{
    validate_initial_state, BoundaryKind, End, ExteriorPort, Junction, Network, PortRef, Pipe,
};
use crate::optimize::{ControlProblem, DescentOptions, Objective, ObjectiveTerm};

pub const RHO_REF: f64 = 1.0;
pub const SOUND_SPEED: f64 = 1.0;
pub const PIPE_LENGTH: f64 = 2.0 * PI;
pub const CFL: f64 = 0.77;

/// A control problem together with its descent settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub problem: ControlProblem,
    pub options: DescentOptions,
}

impl Scenario {
    pub fn network(&self) -> &Network {
        self.problem.model.network()
    }

    pub fn model(&self) -> &Model {
        &self.problem.model
    }
}

/// Looks a scenario up by name (`e1` or `e2`).
pub fn build_scenario(name: &str) -> Result<Scenario> {
    match name.to_ascii_lowercase().as_str() {
        "e1" => build_e1(),
        "e2" => build_e2(),
        other => Err(Error::invalid(format!(
            "unknown scenario `{other}` (expected e1 or e2)"
        ))),
    }
}

/// Tophat over the central half of a pipe with `sin²` ramps over 10% of
/// the length on each side.
pub fn tophat_mask(pipe: &Pipe) -> Vec<f64> {
    (0..pipe.n_points)
        .map(|i| {
            let s = pipe.x(i) / pipe.length;
            let d = (s - 0.5).abs();
            if d <= 0.25 {
                1.0
            } else if d < 0.35 {
                let r = (0.35 - d) / 0.1;
                (0.5 * PI * r).sin().powi(2)
            } else {
                0.0
            }
        })
        .collect()
}

/// Two smooth on/off windows, `[0.1τ, 0.3τ]` and `[0.5τ, 0.55τ]`.
pub fn disturbance_profile(t: f64, tau: f64) -> f64 {
    let w = |a: f64, b: f64| 0.5 * ((0.5 * (t - a * tau)).tanh() - (0.5 * (t - b * tau)).tanh());
    w(0.1, 0.3) + w(0.5, 0.55)
}

fn pipe(id: &str, n_points: usize) -> Pipe {
    Pipe {
        id: id.to_string(),
        length: PIPE_LENGTH,
        n_points,
        area: 1.0,
    }
}

fn junction(id: &str, ports: &[(usize, End)]) -> Junction {
    Junction {
        id: id.to_string(),
        ports: ports.iter().map(|&(p, e)| PortRef::new(p, e)).collect(),
    }
}

fn open_end(pipe: usize, end: End) -> ExteriorPort {
    ExteriorPort {
        port: PortRef::new(pipe, end),
        bc: BoundaryKind::NonReflecting,
    }
}

/// Three pipes `I - II - III` with both outer ends open.
pub fn e1_network(n_points: usize) -> Result<Network> {
    Network::new(
        SOUND_SPEED,
        vec![pipe("I", n_points), pipe("II", n_points), pipe("III", n_points)],
        vec![
            junction("J1", &[(0, End::End), (1, End::Start)]),
            junction("J2", &[(1, End::End), (2, End::Start)]),
        ],
        vec![open_end(0, End::Start), open_end(2, End::End)],
    )
}

/// Diamond: `I` feeds `II` and `III`, which meet again through `IV`, `V`
/// and `VI` before leaving through `VII`.
pub fn e2_network(n_points: usize) -> Result<Network> {
    let ids = ["I", "II", "III", "IV", "V", "VI", "VII"];
    Network::new(
        SOUND_SPEED,
        ids.iter().map(|id| pipe(id, n_points)).collect(),
        vec![
            junction("node1", &[(0, End::End), (1, End::Start), (2, End::Start)]),
            junction("node2", &[(1, End::End), (3, End::Start), (4, End::Start)]),
            junction("node3", &[(2, End::End), (3, End::End), (5, End::Start)]),
            junction("node4", &[(4, End::End), (5, End::End), (6, End::Start)]),
        ],
        vec![open_end(0, End::Start), open_end(6, End::End)],
    )
}

/// E1 target density `ρ_ref (1 + 0.03 exp(-(x - 5π)² / 0.9²))` on pipe III,
/// in global coordinates along the series.
pub fn e1_target(net: &Network) -> Vec<f64> {
    let p = &net.pipes()[2];
    let offset = 2.0 * PIPE_LENGTH;
    (0..p.n_points)
        .map(|i| {
            let x = offset + p.x(i);
            RHO_REF * (1.0 + 0.03 * (-(x - 5.0 * PI).powi(2) / 0.81).exp())
        })
        .collect()
}

fn rest_state(net: &Network) -> Result<crate::network::NetworkState> {
    let q0 = net.uniform_state(RHO_REF, 0.0);
    let diag = validate_initial_state(net, &q0, 1e-12)?;
    if !diag.passed {
        return Err(Error::state("scenario initial state violates the coupling conditions"));
    }
    Ok(q0)
}

/// E1 with the reference resolution (N = 200, 1000 steps).
pub fn build_e1() -> Result<Scenario> {
    build_e1_sized(200, 1000)
}

/// E1 on `n_points` per pipe over `steps` steps; the measurement is taken at
/// the penultimate step level.
pub fn build_e1_sized(n_points: usize, steps: usize) -> Result<Scenario> {
    if steps < 2 {
        return Err(Error::invalid("e1 needs at least two steps"));
    }
    let net = e1_network(n_points)?;
    let q0 = rest_state(&net)?;
    let mut temporal = vec![0.0; steps];
    temporal[steps - 1] = 1.0;
    let objective = Objective::new(
        &net,
        vec![ObjectiveTerm {
            pipe: 2,
            target: e1_target(&net),
            sigma: tophat_mask(&net.pipes()[2]),
        }],
        temporal,
    )?;
    let control = ForcingField::zeros(&net, steps, vec![(0, tophat_mask(&net.pipes()[0]))])?;
    let model = Model::new(net)?;
    Ok(Scenario {
        name: "e1".into(),
        problem: ControlProblem {
            model,
            initial: q0,
            steps,
            cfl: CFL,
            objective,
            control,
            disturbance: None,
        },
        options: DescentOptions {
            alpha_s: E1_ALPHA_S,
            tol: 2e-10,
            max_iters: 30,
        },
    })
}

/// Descent step sizes for the gradient-density convention used here.
pub const E1_ALPHA_S: f64 = 24.0;
pub const E2_ALPHA_S: f64 = 0.1;

/// Amplitude of the E2 consumer disturbance, `10⁻² ρ_ref c² / L`.
pub fn e2_disturbance_amplitude() -> f64 {
    1e-2 * RHO_REF * SOUND_SPEED * SOUND_SPEED / PIPE_LENGTH
}

/// E2 with the reference resolution (N = 200, 5000 steps).
pub fn build_e2() -> Result<Scenario> {
    build_e2_sized(200, 5000)
}

pub fn build_e2_sized(n_points: usize, steps: usize) -> Result<Scenario> {
    if steps < 1 {
        return Err(Error::invalid("e2 needs at least one step"));
    }
    let net = e2_network(n_points)?;
    let q0 = rest_state(&net)?;
    let objective = Objective::new(
        &net,
        vec![ObjectiveTerm {
            pipe: 6,
            target: vec![RHO_REF; n_points],
            sigma: tophat_mask(&net.pipes()[6]),
        }],
        vec![1.0; steps],
    )?;
    let control = ForcingField::zeros(&net, steps, vec![(0, tophat_mask(&net.pipes()[0]))])?;

    let dt = crate::dynamics::cfl_timestep(&net, &q0, CFL)?;
    let tau = steps as f64 * dt;
    let mask = tophat_mask(&net.pipes()[4]);
    let mut disturbance = ForcingField::zeros(&net, steps, vec![(4, mask.clone())])?;
    let amp = e2_disturbance_amplitude();
    let pf = &mut disturbance.pipes_mut()[0];
    for n in 0..steps {
        let f = -amp * disturbance_profile(n as f64 * dt, tau);
        for (i, m) in mask.iter().enumerate() {
            pf.r_m[(n, i)] = f * m;
        }
    }
    let model = Model::new(net)?;
    Ok(Scenario {
        name: "e2".into(),
        problem: ControlProblem {
            model,
            initial: q0,
            steps,
            cfl: CFL,
            objective,
            control,
            disturbance: Some(disturbance),
        },
        options: DescentOptions {
            alpha_s: E2_ALPHA_S,
            tol: 5e-4,
            max_iters: 30,
        },
    })
}
