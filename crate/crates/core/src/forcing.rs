//! Space-time source terms added to the pipe equations.

use ndarray::Array2;

use crate::error::{check_len, Error, Result};
use crate::network::Network;

/// Source terms of one pipe, piecewise constant over each time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeForcing {
    pub pipe: usize,
    /// Spatial influence mask θ(x) in `[0, 1]`.
    pub theta: Vec<f64>,
    /// `r_ρ`, shape `(steps, n_points)`.
    pub r_rho: Array2<f64>,
    /// `r_m`, shape `(steps, n_points)`.
    pub r_m: Array2<f64>,
}

/// Forcing on a subset of the pipes over a fixed number of time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingField {
    steps: usize,
    pipes: Vec<PipeForcing>,
}

impl ForcingField {
    /// No forcing at all.
    pub fn empty(steps: usize) -> Self {
        Self {
            steps,
            pipes: Vec::new(),
        }
    }

    /// Zero forcing on the given pipes with influence masks `(pipe, θ)`.
    pub fn zeros(net: &Network, steps: usize, masks: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        let mut pipes = Vec::with_capacity(masks.len());
        for (pipe, theta) in masks {
            let n = net
                .pipes()
                .get(pipe)
                .ok_or_else(|| Error::invalid(format!("pipe index {pipe} out of range")))?
                .n_points;
            check_len("influence mask", theta.len(), n)?;
            if theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::invalid("influence mask must lie in [0, 1]"));
            }
            if pipes.iter().any(|p: &PipeForcing| p.pipe == pipe) {
                return Err(Error::invalid(format!("pipe {pipe} listed twice")));
            }
            pipes.push(PipeForcing {
                pipe,
                theta,
                r_rho: Array2::zeros((steps, n)),
                r_m: Array2::zeros((steps, n)),
            });
        }
        Ok(Self { steps, pipes })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn pipes(&self) -> &[PipeForcing] {
        &self.pipes
    }

    pub fn pipes_mut(&mut self) -> &mut [PipeForcing] {
        &mut self.pipes
    }

    pub fn get(&self, pipe: usize) -> Option<&PipeForcing> {
        self.pipes.iter().find(|p| p.pipe == pipe)
    }

    pub(crate) fn check(&self, net: &Network, steps: usize) -> Result<()> {
        if self.steps < steps {
            return Err(Error::invalid(format!(
                "forcing covers {} steps, simulation needs {steps}",
                self.steps
            )));
        }
        for p in &self.pipes {
            let n = net
                .pipes()
                .get(p.pipe)
                .ok_or_else(|| Error::invalid(format!("forcing on unknown pipe {}", p.pipe)))?
                .n_points;
            if p.r_rho.dim() != (self.steps, n) || p.r_m.dim() != (self.steps, n) {
                return Err(Error::invalid(format!(
                    "forcing arrays of pipe {} have the wrong shape",
                    p.pipe
                )));
            }
        }
        Ok(())
    }

    /// Largest absolute entry outside the influence masks (should be zero).
    pub fn max_outside_support(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.pipes {
            for (i, &t) in p.theta.iter().enumerate() {
                if t == 0.0 {
                    for s in 0..self.steps {
                        worst = worst.max(p.r_rho[(s, i)].abs()).max(p.r_m[(s, i)].abs());
                    }
                }
            }
        }
        worst
    }
}

/// Sum of all forcing fields for one pipe at one step, if any applies.
pub(crate) fn step_forcing(
    fields: &[&ForcingField],
    pipe: usize,
    step: usize,
    n: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
    for f in fields {
        if let Some(pf) = f.get(pipe) {
            let (r, m) = acc.get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            r.iter_mut()
                .zip(pf.r_rho.row(step))
                .for_each(|(a, b)| *a += b);
            m.iter_mut().zip(pf.r_m.row(step)).for_each(|(a, b)| *a += b);
        }
    }
    acc
}
