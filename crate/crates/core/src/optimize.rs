//! Tracking objective and the steepest-descent control loop.

use crate::adjoint::{extract_gradient, solve_adjoint, GradientField};
use crate::error::{check_len, Error, Result};
use crate::forcing::ForcingField;
use crate::integrate::{simulate, Model, Trajectory};
use crate::network::{Network, NetworkState};

/// Density tracking term on one pipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerm {
    pub pipe: usize,
    /// Target density `ρ_target(x)`.
    pub target: Vec<f64>,
    /// Spatial part of the weight `σ(x, t)`.
    pub sigma: Vec<f64>,
}

/// `J = ½ Σₙ dt Σ (ρⁿ - ρ_target)ᵀ W σ (ρⁿ - ρ_target) dx` with a separable
/// weight `σ(x, tₙ) = σ(x) τₙ`. The sum runs over the step levels
/// `0..steps` (left rectangle rule).
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    terms: Vec<ObjectiveTerm>,
    temporal: Vec<f64>,
}

impl Objective {
    pub fn new(net: &Network, terms: Vec<ObjectiveTerm>, temporal: Vec<f64>) -> Result<Self> {
        for t in &terms {
            let n = net
                .pipes()
                .get(t.pipe)
                .ok_or_else(|| Error::invalid(format!("objective on unknown pipe {}", t.pipe)))?
                .n_points;
            check_len("objective target", t.target.len(), n)?;
            check_len("objective weight", t.sigma.len(), n)?;
            if t.sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                return Err(Error::invalid("objective weight must be non-negative"));
            }
        }
        if temporal.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("temporal weight must be non-negative"));
        }
        Ok(Self { terms, temporal })
    }

    pub fn terms(&self) -> &[ObjectiveTerm] {
        &self.terms
    }

    /// Temporal weights `τₙ`, one per step.
    pub fn temporal(&self) -> &[f64] {
        &self.temporal
    }

    pub(crate) fn check(&self, model: &Model, steps: usize) -> Result<()> {
        check_len("temporal weight", self.temporal.len(), steps)?;
        for t in &self.terms {
            if t.pipe >= model.network().pipes().len() {
                return Err(Error::invalid(format!("objective on unknown pipe {}", t.pipe)));
            }
        }
        Ok(())
    }

    /// Integrand at step `n`, `½ τₙ Σ W dx σ (ρ - ρ_target)²`.
    pub fn instantaneous(&self, model: &Model, q: &NetworkState, n: usize) -> f64 {
        let tau = self.temporal.get(n).copied().unwrap_or(0.0);
        if tau == 0.0 {
            return 0.0;
        }
        let net = model.network();
        let mut sum = 0.0;
        for t in &self.terms {
            let op = &model.operators()[t.pipe];
            let a = net.pipes()[t.pipe].area;
            let rho_a = q.pipe(net, t.pipe).0;
            let mut part = 0.0;
            for (i, w) in op.weights().iter().enumerate() {
                let e = rho_a[i] / a - t.target[i];
                part += w * t.sigma[i] * e * e;
            }
            sum += part * op.dx();
        }
        0.5 * tau * sum
    }

    /// Adds `∂J/∂Qⁿ` in `W dx`-scaled form to `out`.
    pub(crate) fn add_state_sensitivity(
        &self,
        model: &Model,
        q: &NetworkState,
        n: usize,
        dt: f64,
        out: &mut [f64],
    ) {
        let tau = self.temporal.get(n).copied().unwrap_or(0.0);
        if tau == 0.0 {
            return;
        }
        let net = model.network();
        for t in &self.terms {
            let a = net.pipes()[t.pipe].area;
            let off = net.pipe_offset(t.pipe);
            let rho_a = q.pipe(net, t.pipe).0;
            for i in 0..t.sigma.len() {
                out[off + i] += dt * tau * t.sigma[i] * (rho_a[i] / a - t.target[i]) / a;
            }
        }
    }
}

/// Objective value of a forward trajectory.
pub fn evaluate_objective(model: &Model, traj: &Trajectory, obj: &Objective) -> Result<f64> {
    let steps = traj.steps();
    obj.check(model, steps)?;
    Ok(traj.states[..steps]
        .iter()
        .enumerate()
        .map(|(n, q)| traj.dt * obj.instantaneous(model, q, n))
        .sum())
}

/// Everything the control loop needs besides its step-size settings.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub model: Model,
    pub initial: NetworkState,
    pub steps: usize,
    pub cfl: f64,
    pub objective: Objective,
    /// Starting control; its masks define where the control acts.
    pub control: ForcingField,
    /// Fixed forcing that is not optimized.
    pub disturbance: Option<ForcingField>,
}

impl ControlProblem {
    /// Forward solve with the given control plus the disturbance.
    pub fn forward(&self, control: &ForcingField) -> Result<Trajectory> {
        let mut fields = vec![control];
        if let Some(d) = &self.disturbance {
            fields.push(d);
        }
        simulate(&self.model, &self.initial, self.steps, self.cfl, &fields)
    }

    /// Objective value and gradient density for a control.
    pub fn value_and_gradient(&self, control: &ForcingField) -> Result<(f64, GradientField)> {
        let traj = self.forward(control)?;
        let j = evaluate_objective(&self.model, &traj, &self.objective)?;
        let g = self.gradient_from(&traj, control)?;
        Ok((j, g))
    }

    fn gradient_from(&self, traj: &Trajectory, control: &ForcingField) -> Result<GradientField> {
        let mut fields = vec![control];
        if let Some(d) = &self.disturbance {
            fields.push(d);
        }
        let adj = solve_adjoint(&self.model, traj, &fields, &self.objective)?;
        extract_gradient(&self.model, &adj, control)
    }
}

/// Step size and stopping rule of the descent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub alpha_s: f64,
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub iterations: usize,
    pub j_history: Vec<f64>,
    pub forcing: ForcingField,
    pub converged: bool,
    /// Last value of `(J_{n-1} - J_n) / J₁`, NaN after a single iteration.
    pub criterion: f64,
    /// Forward solution belonging to the last recorded `J`.
    pub trajectory: Trajectory,
}

/// Fixed-step steepest descent `r ← r - α_s θ ∇J`.
///
/// Stops once `0 < (J_{n-1} - J_n) / J₁ < tol`, or after `max_iters`
/// objective evaluations. Three consecutive increases of `J` abort with a
/// step-size error.
pub fn steepest_descent(problem: &ControlProblem, opts: DescentOptions) -> Result<OptimizationResult> {
    steepest_descent_with(problem, opts, |_, _| {})
}

/// As [`steepest_descent`], reporting `(iteration, J)` after every forward
/// solve.
pub fn steepest_descent_with(
    problem: &ControlProblem,
    opts: DescentOptions,
    mut report: impl FnMut(usize, f64),
) -> Result<OptimizationResult> {
    if !(opts.alpha_s >= 0.0) || !opts.alpha_s.is_finite() {
        return Err(Error::invalid(format!(
            "step size must be non-negative, got {}",
            opts.alpha_s
        )));
    }
    if opts.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let mut control = problem.control.clone();
    let mut history: Vec<f64> = Vec::new();
    let mut increases = 0;
    let mut criterion = f64::NAN;
    let mut converged = false;
    loop {
        let traj = problem.forward(&control)?;
        let j = evaluate_objective(&problem.model, &traj, &problem.objective)?;
        history.push(j);
        let it = history.len();
        report(it, j);
        if let [.., prev, last] = history[..] {
            let j1 = history[0];
            let drop = prev - last;
            criterion = if j1 > 0.0 { drop / j1 } else { 0.0 };
            if drop < 0.0 {
                increases += 1;
                if increases >= 3 {
                    return Err(Error::StepSize(format!(
                        "objective increased for 3 consecutive iterations (J = {last:e}); \
                         reduce alpha_s (currently {})",
                        opts.alpha_s
                    )));
                }
            } else {
                increases = 0;
            }
            if drop > 0.0 && criterion < opts.tol {
                converged = true;
            }
        } else if j == 0.0 {
            converged = true;
        }
        if converged || it >= opts.max_iters {
            return Ok(OptimizationResult {
                iterations: it,
                j_history: history,
                forcing: control,
                converged,
                criterion,
                trajectory: traj,
            });
        }
        let grad = problem.gradient_from(&traj, &control)?;
        for pf in control.pipes_mut() {
            let Some(g) = grad.get(pf.pipe) else { continue };
            let (steps, n) = pf.r_rho.dim();
            for k in 0..steps {
                for i in 0..n {
                    let step = opts.alpha_s * pf.theta[i];
                    pf.r_rho[(k, i)] -= step * g.g_r_rho[(k, i)];
                    pf.r_m[(k, i)] -= step * g.g_r_m[(k, i)];
                }
            }
        }
    }
}
