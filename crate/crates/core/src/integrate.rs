//! Explicit RK4 time stepping of the coupled network.
//!
//! Per-pipe right-hand sides are evaluated independently (in parallel), the
//! junction coupling `(I + C)` is applied as a single sparse exchange, and
//! closed ends have their mass-flux rate pinned to zero. Non-reflecting
//! exterior ends are imposed weakly: a characteristic penalty at the end
//! point damps the incoming amplitudes towards the reference state.

use rayon::prelude::*;

use crate::coupling::{assemble_coupling_matrix, CouplingMatrix};
use crate::dynamics::{matvec2, nonreflecting_penalty, pipe_rhs_into};
use crate::error::{check_len, Error, Result};
use crate::forcing::{step_forcing, ForcingField};
use crate::network::{BoundaryKind, Network, NetworkState, Variable};
use crate::sbp::SbpOperator;

/// Network together with its discretization and coupling matrix.
#[derive(Debug, Clone)]
pub struct Model {
    net: Network,
    ops: Vec<SbpOperator>,
    coupling: CouplingMatrix,
    closed: Vec<usize>,
    weights: Vec<f64>,
}

impl Model {
    /// Second-order SBP discretization of every pipe.
    pub fn new(net: Network) -> Result<Self> {
        let ops = net
            .pipes()
            .iter()
            .map(|p| SbpOperator::second_order(p.n_points, p.dx()))
            .collect::<Result<Vec<_>>>()?;
        let coupling = assemble_coupling_matrix(&net, &ops)?;
        let closed = net
            .exterior()
            .iter()
            .filter(|e| e.bc == BoundaryKind::Closed)
            .map(|e| net.port_index(e.port, Variable::MA))
            .collect();
        let mut weights = Vec::with_capacity(net.dof());
        for op in &ops {
            for _ in 0..2 {
                weights.extend(op.weights().iter().map(|w| w * op.dx()));
            }
        }
        Ok(Self {
            net,
            ops,
            coupling,
            closed,
            weights,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn operators(&self) -> &[SbpOperator] {
        &self.ops
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    /// Diagonal of the network quadrature `W dx`, one entry per unknown.
    pub fn quadrature_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Flat indices of the mass-flux entries at closed ends.
    pub(crate) fn closed_indices(&self) -> &[usize] {
        &self.closed
    }

    /// Total mass `Σ 1ᵀ W (ρA) dx` over all pipes.
    pub fn total_mass(&self, q: &NetworkState) -> f64 {
        (0..self.net.pipes().len())
            .map(|p| self.ops[p].integrate_unchecked(q.pipe(&self.net, p).0))
            .sum()
    }

    /// Uncoupled per-pipe rates `Q̃̇`, forcing included.
    pub fn uncoupled_rate(
        &self,
        q: &[f64],
        fields: &[&ForcingField],
        step: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let c = self.net.sound_speed();
        let pipes = self.net.pipes();
        let mut chunks: Vec<(usize, &mut [f64])> = Vec::with_capacity(pipes.len());
        let mut rest = out;
        for (p, pipe) in pipes.iter().enumerate() {
            let (head, tail) = rest.split_at_mut(2 * pipe.n_points);
            chunks.push((p, head));
            rest = tail;
        }
        chunks.into_par_iter().try_for_each(|(p, chunk)| {
            let pipe = &pipes[p];
            let n = pipe.n_points;
            let block = &q[self.net.pipe_range(p)];
            let (rho_a, m_a) = block.split_at(n);
            let (d_rho, d_m) = chunk.split_at_mut(n);
            let forcing = step_forcing(fields, p, step, n);
            let mut scratch = vec![0.0; n];
            pipe_rhs_into(
                pipe,
                rho_a,
                m_a,
                &self.ops[p],
                c,
                forcing.as_ref().map(|(r, m)| (r.as_slice(), m.as_slice())),
                d_rho,
                d_m,
                &mut scratch,
            )
        })
    }

    /// Coupled rate `Q̇ = (I + C) Q̃̇` with closed ends pinned, plus the
    /// non-reflecting penalties.
    pub fn coupled_rate(
        &self,
        q: &[f64],
        fields: &[&ForcingField],
        step: usize,
        bcs: &[BoundaryPenalty],
        out: &mut [f64],
    ) -> Result<()> {
        let mut tilde = vec![0.0; q.len()];
        self.uncoupled_rate(q, fields, step, &mut tilde)?;
        self.coupling.apply_into(&tilde, out);
        for &i in &self.closed {
            out[i] = 0.0;
        }
        for bc in bcs {
            bc.add_rate(q, out);
        }
        Ok(())
    }

    /// Non-reflecting penalties linearised about `reference`.
    pub fn boundary_penalties(&self, reference: &NetworkState) -> Result<Vec<BoundaryPenalty>> {
        reference.check(&self.net)?;
        let c = self.net.sound_speed();
        self.net
            .exterior()
            .iter()
            .filter(|e| e.bc == BoundaryKind::NonReflecting)
            .map(|e| {
                let p = e.port.pipe;
                let a = self.net.pipes()[p].area;
                let rho_idx = self.net.port_index(e.port, Variable::RhoA);
                let m_idx = self.net.port_index(e.port, Variable::MA);
                let q0 = [reference.values[rho_idx], reference.values[m_idx]];
                let op = &self.ops[p];
                let penalty = nonreflecting_penalty(
                    e.port.normal(),
                    (q0[0] / a, q0[1] / a),
                    c,
                    op.end_weight(),
                    op.dx(),
                )?;
                Ok(BoundaryPenalty {
                    rho_idx,
                    m_idx,
                    reference: q0,
                    penalty,
                })
            })
            .collect()
    }

    /// One RK4 step of the coupled system. Returns the new state and, if
    /// requested, the four stage inputs.
    pub(crate) fn step(
        &self,
        y: &[f64],
        fields: &[&ForcingField],
        step: usize,
        dt: f64,
        bcs: &[BoundaryPenalty],
        keep_stages: bool,
    ) -> Result<(Vec<f64>, Option<[Vec<f64>; 4]>)> {
        let mut stages: Vec<Vec<f64>> = Vec::new();
        let next = rk4_step(y, dt, |s, out| {
            if keep_stages {
                stages.push(s.to_vec());
            }
            self.coupled_rate(s, fields, step, bcs, out)
        })?;
        let stages = if keep_stages {
            let [a, b, c, d]: [Vec<f64>; 4] = stages.try_into().expect("four RK4 stages");
            Some([a, b, c, d])
        } else {
            None
        };
        Ok((next, stages))
    }
}

/// Weak characteristic condition at one non-reflecting end.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPenalty {
    pub(crate) rho_idx: usize,
    pub(crate) m_idx: usize,
    /// `(ρA, ρuA)` of the reference state at the port.
    pub(crate) reference: [f64; 2],
    /// Penalty matrix; identical in `(ρ, m)` and `(ρA, ρuA)`.
    pub(crate) penalty: [[f64; 2]; 2],
}

impl BoundaryPenalty {
    pub(crate) fn add_rate(&self, q: &[f64], out: &mut [f64]) {
        let d = [
            q[self.rho_idx] - self.reference[0],
            q[self.m_idx] - self.reference[1],
        ];
        let f = matvec2(self.penalty, d);
        out[self.rho_idx] += f[0];
        out[self.m_idx] += f[1];
    }

    /// Subtracts `Mᵀ q*` at the port (adjoint rate convention).
    pub(crate) fn add_adjoint_rate(&self, qstar: &[f64], out: &mut [f64]) {
        let p = crate::dynamics::transpose2(self.penalty);
        let f = matvec2(p, [qstar[self.rho_idx], qstar[self.m_idx]]);
        out[self.rho_idx] -= f[0];
        out[self.m_idx] -= f[1];
    }
}

/// Classic four-stage Runge-Kutta step `y + dt/6 (k1 + 2k2 + 2k3 + k4)`.
///
/// `rate(y, out)` writes the time derivative at `y` into `out`. Any
/// non-finite stage rate aborts the step.
pub fn rk4_step<F>(y: &[f64], dt: f64, mut rate: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let n = y.len();
    let mut k = vec![0.0; n];
    let mut acc = y.to_vec();
    let mut stage = vec![0.0; n];
    let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
    let offsets = [0.5, 0.5, 1.0];
    stage.copy_from_slice(y);
    for s in 0..4 {
        rate(&stage, &mut k)?;
        if let Some(i) = k.iter().position(|v| !v.is_finite()) {
            return Err(Error::state(format!(
                "non-finite rate in RK4 stage {} at entry {i}",
                s + 1
            )));
        }
        for (a, kv) in acc.iter_mut().zip(&k) {
            *a += dt * weights[s] * kv;
        }
        if s < 3 {
            for ((st, yv), kv) in stage.iter_mut().zip(y).zip(&k) {
                *st = yv + dt * offsets[s] * kv;
            }
        }
    }
    Ok(acc)
}

/// Forward solution on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub dt: f64,
    pub cfl: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Integrates `steps` RK4 steps from `q0`. The step size is fixed from the
/// CFL condition of the initial state; forcing is piecewise constant per
/// step. The reference state of non-reflecting ends is `q0`.
pub fn simulate(
    model: &Model,
    q0: &NetworkState,
    steps: usize,
    cfl: f64,
    forcing: &[&ForcingField],
) -> Result<Trajectory> {
    let dt = crate::dynamics::cfl_timestep(&model.net, q0, cfl)?;
    simulate_with_dt(model, q0, steps, dt, cfl, forcing)
}

/// As [`simulate`] with an explicit step size.
pub fn simulate_with_dt(
    model: &Model,
    q0: &NetworkState,
    steps: usize,
    dt: f64,
    cfl: f64,
    forcing: &[&ForcingField],
) -> Result<Trajectory> {
    q0.check(&model.net)?;
    for f in forcing {
        f.check(&model.net, steps)?;
    }
    let bcs = model.boundary_penalties(q0)?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(q0.clone());
    for n in 0..steps {
        let (next, _) = model
            .step(&states[n].values, forcing, n, dt, &bcs, false)
            .map_err(|e| at_step(e, n))?;
        states.push(NetworkState::new(next));
    }
    let times = (0..=steps).map(|n| n as f64 * dt).collect();
    Ok(Trajectory {
        times,
        states,
        dt,
        cfl,
    })
}

fn at_step(e: Error, n: usize) -> Error {
    match e {
        Error::StateInvalid(m) => Error::StateInvalid(format!("step {n}: {m}")),
        other => other,
    }
}

pub(crate) fn check_dim(model: &Model, v: &[f64]) -> Result<()> {
    check_len("network vector", v.len(), model.net.dof())
}
