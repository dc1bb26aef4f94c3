//! Discrete adjoint of the coupled network solver and forcing gradients.
//!
//! Adjoint variables live in the `W dx`-scaled space, so they approximate
//! the continuous multipliers `q*` and the gradient is a density that does
//! not depend on the mesh. The backward sweep is the exact transpose of the
//! forward RK4 step: stage Jacobians are evaluated at the forward stage
//! states, recomputed from the stored step states.

use ndarray::Array2;
use rayon::prelude::*;

use crate::dynamics::{characteristic_basis, outgoing_families, PipeRhs};
use crate::error::{check_len, Error, Result};
use crate::forcing::ForcingField;
use crate::integrate::{check_dim, BoundaryPenalty, Model, Trajectory};
use crate::network::{NetworkState, PortRef};
use crate::optimize::Objective;
use crate::sbp::SbpOperator;

/// Adjoint multipliers, laid out exactly like [`NetworkState`].
pub type AdjointState = NetworkState;

/// Adjoint solution on the forward time grid.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub times: Vec<f64>,
    /// `Q*` at every step level, `states[steps]` is the terminal zero state.
    pub states: Vec<AdjointState>,
    /// RK4-weighted mean of the stage multipliers of each step; the
    /// sensitivity of the step to a forcing that is constant over it.
    pub step_means: Vec<Vec<f64>>,
    pub dt: f64,
}

/// Gradient density of one forced pipe, shape `(steps, n_points)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeGradient {
    pub pipe: usize,
    pub g_r_rho: Array2<f64>,
    pub g_r_m: Array2<f64>,
}

/// Gradient of the objective with respect to a [`ForcingField`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub dt: f64,
    pub pipes: Vec<PipeGradient>,
}

impl GradientField {
    /// `⟨∇J, δr⟩ = Σₙ dt Σᵢ W dx (g_ρ δr_ρ + g_m δr_m)`.
    pub fn dot(&self, model: &Model, dr: &ForcingField) -> Result<f64> {
        let mut sum = 0.0;
        for pf in dr.pipes() {
            let Some(g) = self.pipes.iter().find(|g| g.pipe == pf.pipe) else {
                continue;
            };
            if g.g_r_rho.dim() != pf.r_rho.dim() {
                return Err(Error::invalid("gradient and perturbation grids differ"));
            }
            let op = &model.operators()[pf.pipe];
            let w: Vec<f64> = op.weights().iter().map(|w| w * op.dx()).collect();
            for (row_g, row_r) in g.g_r_rho.rows().into_iter().zip(pf.r_rho.rows()) {
                sum += row_g.iter().zip(row_r).zip(&w).map(|((a, b), w)| a * b * w).sum::<f64>();
            }
            for (row_g, row_r) in g.g_r_m.rows().into_iter().zip(pf.r_m.rows()) {
                sum += row_g.iter().zip(row_r).zip(&w).map(|((a, b), w)| a * b * w).sum::<f64>();
            }
        }
        Ok(sum * self.dt)
    }

    pub fn get(&self, pipe: usize) -> Option<&PipeGradient> {
        self.pipes.iter().find(|g| g.pipe == pipe)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.pipes
            .iter()
            .flat_map(|g| g.g_r_rho.iter().chain(g.g_r_m.iter()))
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Interior adjoint rate `-L₂ᵀ D q* - g` of one pipe with
/// `L₂ = [[0, 1], [c² - u², 2u]]` evaluated at the forward state.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_pipe_rhs(
    rho_star: &[f64],
    m_star: &[f64],
    rho_a: &[f64],
    m_a: &[f64],
    g: Option<(&[f64], &[f64])>,
    sbp: &SbpOperator,
    c: f64,
) -> Result<PipeRhs> {
    let n = sbp.n_points();
    for (what, v) in [
        ("adjoint_pipe_rhs: rho*", rho_star),
        ("adjoint_pipe_rhs: m*", m_star),
        ("adjoint_pipe_rhs: rhoA", rho_a),
        ("adjoint_pipe_rhs: mA", m_a),
    ] {
        check_len(what, v.len(), n)?;
    }
    let mut d_rho_a = vec![0.0; n];
    let mut d_m_a = vec![0.0; n];
    let mut scratch = vec![0.0; 2 * n];
    interior_rate(rho_star, m_star, rho_a, m_a, sbp, c, &mut d_rho_a, &mut d_m_a, &mut scratch)?;
    if let Some((gr, gm)) = g {
        check_len("adjoint_pipe_rhs: g_rho", gr.len(), n)?;
        check_len("adjoint_pipe_rhs: g_m", gm.len(), n)?;
        d_rho_a.iter_mut().zip(gr).for_each(|(d, g)| *d -= g);
        d_m_a.iter_mut().zip(gm).for_each(|(d, g)| *d -= g);
    }
    Ok(PipeRhs { d_rho_a, d_m_a })
}

#[allow(clippy::too_many_arguments)]
fn interior_rate(
    rho_star: &[f64],
    m_star: &[f64],
    rho_a: &[f64],
    m_a: &[f64],
    sbp: &SbpOperator,
    c: f64,
    out_rho: &mut [f64],
    out_m: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    if let Some(i) = rho_a.iter().position(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::state(format!(
            "non-positive forward density {} at point {i}",
            rho_a[i]
        )));
    }
    let n = rho_star.len();
    let (dr, dm) = scratch.split_at_mut(n);
    sbp.derivative_into(rho_star, dr);
    sbp.derivative_into(m_star, dm);
    let c2 = c * c;
    for i in 0..n {
        let u = m_a[i] / rho_a[i];
        out_rho[i] = -(c2 - u * u) * dm[i];
        out_m[i] = -dr[i] - 2.0 * u * dm[i];
    }
    Ok(())
}

/// Boundary part of the transposed SBP derivative, `L₂ᵀ W⁻¹ B q*`, added to
/// the two end points of a pipe.
fn add_boundary_terms(
    rho_star: &[f64],
    m_star: &[f64],
    rho_a: &[f64],
    m_a: &[f64],
    sbp: &SbpOperator,
    c: f64,
    out_rho: &mut [f64],
    out_m: &mut [f64],
) {
    let n = rho_star.len();
    let scale = 1.0 / (sbp.end_weight() * sbp.dx());
    for (i, sign) in [(0, -1.0), (n - 1, 1.0)] {
        let u = m_a[i] / rho_a[i];
        let s = sign * scale;
        out_rho[i] += s * (c * c - u * u) * m_star[i];
        out_m[i] += s * (rho_star[i] + 2.0 * u * m_star[i]);
    }
}

impl Model {
    /// `𝒲⁻¹ (I + C)ᵀ 𝒲 v` with closed-end mass-flux entries removed first;
    /// the `W dx`-adjoint of the coupled rate map.
    pub(crate) fn coupling_adjoint(&self, v: &[f64]) -> Vec<f64> {
        let w = self.quadrature_weights();
        let mut scaled: Vec<f64> = v.iter().zip(w).map(|(a, b)| a * b).collect();
        for &i in self.closed_indices() {
            scaled[i] = 0.0;
        }
        let mut out = vec![0.0; v.len()];
        self.coupling().apply_transpose_into(&scaled, &mut out);
        out.iter_mut().zip(w).for_each(|(o, w)| *o /= w);
        out
    }
}

/// Network adjoint rate: `P = 𝒲⁻¹(I + C)ᵀ𝒲 Q*`, then per pipe
/// `-L₂ᵀ D P + L₂ᵀ W⁻¹ B P - g`, minus the transposed non-reflecting
/// penalties `Mᵀ Q*` at the open ends.
///
/// `g` is an optional source with the layout of the state.
pub fn adjoint_network_rhs(
    model: &Model,
    qstar: &[f64],
    q_forward: &[f64],
    bcs: &[BoundaryPenalty],
    g: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_dim(model, qstar)?;
    check_dim(model, q_forward)?;
    if let Some(g) = g {
        check_dim(model, g)?;
    }
    let mut out = vec![0.0; qstar.len()];
    network_rate_into(model, qstar, q_forward, bcs, &mut out)?;
    if let Some(g) = g {
        out.iter_mut().zip(g).for_each(|(o, g)| *o -= g);
    }
    Ok(out)
}

fn network_rate_into(
    model: &Model,
    qstar: &[f64],
    q: &[f64],
    bcs: &[BoundaryPenalty],
    out: &mut [f64],
) -> Result<()> {
    let net = model.network();
    let c = net.sound_speed();
    let p = model.coupling_adjoint(qstar);
    let mut chunks: Vec<(usize, &mut [f64])> = Vec::with_capacity(net.pipes().len());
    let mut rest = &mut *out;
    for (k, pipe) in net.pipes().iter().enumerate() {
        let (head, tail) = rest.split_at_mut(2 * pipe.n_points);
        chunks.push((k, head));
        rest = tail;
    }
    chunks.into_par_iter().try_for_each(|(k, chunk)| {
        let n = net.pipes()[k].n_points;
        let range = net.pipe_range(k);
        let (ps_rho, ps_m) = p[range.clone()].split_at(n);
        let (rho_a, m_a) = q[range].split_at(n);
        let (o_rho, o_m) = chunk.split_at_mut(n);
        let op = &model.operators()[k];
        let mut scratch = vec![0.0; 2 * n];
        interior_rate(ps_rho, ps_m, rho_a, m_a, op, c, o_rho, o_m, &mut scratch)?;
        add_boundary_terms(ps_rho, ps_m, rho_a, m_a, op, c, o_rho, o_m);
        Ok::<(), Error>(())
    })?;
    for bc in bcs {
        bc.add_adjoint_rate(qstar, out);
    }
    Ok(())
}

/// Adjoint non-reflecting treatment at an exterior port.
///
/// The multiplier is decomposed on the characteristic basis of the adjoint
/// quasi-linear matrix `Z* = Zᵀ` at the forward state. The adjoint runs
/// backward in time, so the families that leave the pipe in forward time
/// enter it in reverse time; their amplitudes are zeroed. The adjoint
/// reference value is zero, so the map is linear. The backward solver
/// imposes the same condition weakly through the transposed penalties.
pub fn apply_nonreflecting_adjoint(
    port: PortRef,
    qstar_boundary: (f64, f64),
    q_forward: (f64, f64),
    c: f64,
) -> Result<(f64, f64)> {
    let basis = characteristic_basis(q_forward.0, q_forward.1, c)?;
    let out = outgoing_families(&basis, port.normal());
    let adj = basis.transposed();
    let p = adj.projector([!out[0], !out[1]]);
    let v = crate::dynamics::matvec2(p, [qstar_boundary.0, qstar_boundary.1]);
    Ok((v[0], v[1]))
}

/// Adjoint quasi-linear matrix `Z* = [[0, c² - u²], [1, 2u]]`.
pub fn adjoint_quasi_linear_matrix(rho: f64, m: f64, c: f64) -> [[f64; 2]; 2] {
    crate::dynamics::transpose2(crate::dynamics::quasi_linear_matrix(rho, m, c))
}

/// Solves the adjoint system backward from `Q*(t_end) = 0`.
///
/// `forcing` must be the forcing used to produce `traj`; it is needed to
/// recompute the forward stage states.
pub fn solve_adjoint(
    model: &Model,
    traj: &Trajectory,
    forcing: &[&ForcingField],
    objective: &Objective,
) -> Result<AdjointTrajectory> {
    let steps = traj.steps();
    if traj.times.len() != steps + 1 {
        return Err(Error::invalid("trajectory times and states differ in length"));
    }
    objective.check(model, steps)?;
    for f in forcing {
        f.check(model.network(), steps)?;
    }
    let dt = traj.dt;
    let bcs = model.boundary_penalties(&traj.states[0])?;
    let dim = model.network().dof();

    let mut states = vec![NetworkState::new(vec![0.0; dim]); steps + 1];
    let mut step_means = vec![Vec::new(); steps];
    let mut lambda = vec![0.0; dim];
    objective.add_state_sensitivity(model, &traj.states[steps], steps, dt, &mut lambda);
    states[steps].values.clone_from(&lambda);

    let mut k = vec![0.0; dim];
    let mut arg = vec![0.0; dim];
    for n in (0..steps).rev() {
        let y = &traj.states[n].values;
        let (_, stages) = model.step(y, forcing, n, dt, &bcs, true)?;
        let stages = stages.expect("stage states requested");

        let mu = lambda;
        let mut acc = mu.clone();
        let mut mean: Vec<f64> = mu.iter().map(|v| v / 6.0).collect();
        let factors = [0.5, 0.5, 1.0, 0.0];
        let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        let mean_weights = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        arg.copy_from_slice(&mu);
        for s in 0..4 {
            network_rate_into(model, &arg, &stages[3 - s], &bcs, &mut k)
                .map_err(|e| Error::state(format!("adjoint step {n}: {e}")))?;
            k.iter_mut().for_each(|v| *v = -*v);
            for (a, kv) in acc.iter_mut().zip(&k) {
                *a += dt * weights[s] * kv;
            }
            if s < 3 {
                for ((a, m), kv) in arg.iter_mut().zip(&mu).zip(&k) {
                    *a = m + dt * factors[s] * kv;
                }
                for (m, a) in mean.iter_mut().zip(&arg) {
                    *m += mean_weights[s] * a;
                }
            }
        }
        if let Some(i) = acc.iter().position(|v| !v.is_finite()) {
            return Err(Error::state(format!(
                "non-finite adjoint value at step {n}, entry {i}"
            )));
        }
        step_means[n] = mean;
        objective.add_state_sensitivity(model, &traj.states[n], n, dt, &mut acc);
        states[n].values.clone_from(&acc);
        lambda = acc;
    }
    Ok(AdjointTrajectory {
        times: traj.times.clone(),
        states,
        step_means,
        dt,
    })
}

/// Gradient density `𝒲⁻¹(I + C)ᵀ𝒲` applied to the step sensitivities,
/// restricted to the support of the control masks.
pub fn extract_gradient(
    model: &Model,
    adjoint: &AdjointTrajectory,
    control: &ForcingField,
) -> Result<GradientField> {
    let net = model.network();
    let steps = adjoint.step_means.len();
    let mut pipes: Vec<PipeGradient> = control
        .pipes()
        .iter()
        .map(|pf| {
            let n = net.pipes()[pf.pipe].n_points;
            PipeGradient {
                pipe: pf.pipe,
                g_r_rho: Array2::zeros((steps, n)),
                g_r_m: Array2::zeros((steps, n)),
            }
        })
        .collect();
    for (s, mean) in adjoint.step_means.iter().enumerate() {
        check_dim(model, mean)?;
        let g = model.coupling_adjoint(mean);
        for (pg, pf) in pipes.iter_mut().zip(control.pipes()) {
            let range = net.pipe_range(pf.pipe);
            let n = pf.theta.len();
            let (gr, gm) = g[range].split_at(n);
            for i in 0..n {
                if pf.theta[i] > 0.0 {
                    pg.g_r_rho[(s, i)] = gr[i];
                    pg.g_r_m[(s, i)] = gm[i];
                }
            }
        }
    }
    Ok(GradientField {
        dt: adjoint.dt,
        pipes,
    })
}
