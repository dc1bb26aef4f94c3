//! Uncoupled isothermal Euler right-hand side per pipe, time-step
//! selection, and characteristic (non-reflecting) boundary treatment.

use crate::error::{check_len, Error, Result};
use crate::network::{Network, NetworkState, Pipe};
use crate::sbp::SbpOperator;

/// Time derivative of one pipe's conserved variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeRhs {
    pub d_rho_a: Vec<f64>,
    pub d_m_a: Vec<f64>,
}

/// Evaluates the uncoupled semi-discrete isothermal Euler equations
///
/// ```text
/// ∂t(ρA) = -D(ρuA)                        + r_ρ
/// ∂t(ρuA) = -D((ρuA)²/(ρA)) - A D(c² ρ)   + r_m
/// ```
///
/// with the pipe's SBP derivative `D`. Forcing defaults to zero.
pub fn pipe_rhs(
    pipe: &Pipe,
    rho_a: &[f64],
    m_a: &[f64],
    sbp: &SbpOperator,
    c: f64,
    forcing: Option<(&[f64], &[f64])>,
) -> Result<PipeRhs> {
    let n = pipe.n_points;
    check_len("pipe_rhs: rhoA", rho_a.len(), n)?;
    check_len("pipe_rhs: mA", m_a.len(), n)?;
    check_len("pipe_rhs: operator", sbp.n_points(), n)?;
    if let Some((fr, fm)) = forcing {
        check_len("pipe_rhs: r_rho", fr.len(), n)?;
        check_len("pipe_rhs: r_m", fm.len(), n)?;
    }
    let mut d_rho_a = vec![0.0; n];
    let mut d_m_a = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    pipe_rhs_into(
        pipe,
        rho_a,
        m_a,
        sbp,
        c,
        forcing,
        &mut d_rho_a,
        &mut d_m_a,
        &mut scratch,
    )?;
    Ok(PipeRhs { d_rho_a, d_m_a })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pipe_rhs_into(
    pipe: &Pipe,
    rho_a: &[f64],
    m_a: &[f64],
    sbp: &SbpOperator,
    c: f64,
    forcing: Option<(&[f64], &[f64])>,
    d_rho_a: &mut [f64],
    d_m_a: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    if let Some(i) = rho_a.iter().position(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::state(format!(
            "non-positive density {} in pipe {} at point {i}",
            rho_a[i], pipe.id
        )));
    }
    let c2 = c * c;

    // continuity
    sbp.derivative_into(m_a, d_rho_a);
    d_rho_a.iter_mut().for_each(|v| *v = -*v);

    // momentum: -D(mA²/ρA) - c² D(ρA), using A D(ρ) = D(ρA) for constant A
    for ((s, &m), &r) in scratch.iter_mut().zip(m_a).zip(rho_a) {
        *s = m * m / r + c2 * r;
    }
    sbp.derivative_into(scratch, d_m_a);
    d_m_a.iter_mut().for_each(|v| *v = -*v);

    if let Some((fr, fm)) = forcing {
        d_rho_a.iter_mut().zip(fr).for_each(|(d, f)| *d += f);
        d_m_a.iter_mut().zip(fm).for_each(|(d, f)| *d += f);
    }
    Ok(())
}

/// Largest stable step `cfl · min dx / max(|u - c|, |u + c|)` over all
/// pipes and grid points.
pub fn cfl_timestep(net: &Network, q: &NetworkState, cfl: f64) -> Result<f64> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::invalid(format!("cfl must lie in (0, 1], got {cfl}")));
    }
    q.check(net)?;
    let c = net.sound_speed();
    let mut dt = f64::INFINITY;
    for (p, pipe) in net.pipes().iter().enumerate() {
        let (rho_a, m_a) = q.pipe(net, p);
        let dx = pipe.dx();
        for (r, m) in rho_a.iter().zip(m_a) {
            let u = m / r;
            let speed = (u - c).abs().max((u + c).abs());
            dt = dt.min(dx / speed);
        }
    }
    Ok(cfl * dt)
}

/// Eigen-decomposition of a 2x2 quasi-linear flux matrix with the acoustic
/// eigenvalues `u ± c`.
///
/// `right[k]` is the right eigenvector of family `k` (0 = `+`, 1 = `-`),
/// `left[k]` the matching left eigenvector, scaled so that
/// `left[i] · right[j] = δij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicBasis {
    pub lambda: [f64; 2],
    pub right: [[f64; 2]; 2],
    pub left: [[f64; 2]; 2],
}

impl CharacteristicBasis {
    /// Characteristic amplitudes `left[k] · dq`.
    pub fn amplitudes(&self, dq: [f64; 2]) -> [f64; 2] {
        [dot(self.left[0], dq), dot(self.left[1], dq)]
    }

    /// `T Λ T⁻¹`, which reproduces the decomposed matrix.
    pub fn reconstruct(&self) -> [[f64; 2]; 2] {
        let mut z = [[0.0; 2]; 2];
        for (i, row) in z.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..2)
                    .map(|k| self.right[k][i] * self.lambda[k] * self.left[k][j])
                    .sum();
            }
        }
        z
    }

    /// The transposed basis, which decomposes `Zᵀ` with the same eigenvalues.
    pub fn transposed(&self) -> Self {
        Self {
            lambda: self.lambda,
            right: self.left,
            left: self.right,
        }
    }

    /// Projector that keeps the families flagged in `keep` and removes the others.
    pub fn projector(&self, keep: [bool; 2]) -> [[f64; 2]; 2] {
        self.weighted([keep[0] as u8 as f64, keep[1] as u8 as f64])
    }

    /// `Σₖ sₖ rₖ lₖᵀ`.
    pub fn weighted(&self, s: [f64; 2]) -> [[f64; 2]; 2] {
        let mut p = [[0.0; 2]; 2];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..2)
                    .map(|k| s[k] * self.right[k][i] * self.left[k][j])
                    .sum();
            }
        }
        p
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn matvec2(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [dot(m[0], v), dot(m[1], v)]
}

pub(crate) fn transpose2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

/// Quasi-linear matrix `Z = [[0, 1], [c² - u², 2u]]` for `q = (ρ, m)`.
pub fn quasi_linear_matrix(rho: f64, m: f64, c: f64) -> [[f64; 2]; 2] {
    let u = m / rho;
    [[0.0, 1.0], [c * c - u * u, 2.0 * u]]
}

/// Characteristic decomposition of `Z` at the state `(ρ, m = ρu)`.
pub fn characteristic_basis(rho: f64, m: f64, c: f64) -> Result<CharacteristicBasis> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::state(format!("non-positive density {rho}")));
    }
    if !(c > 0.0) {
        return Err(Error::invalid(format!("sound speed must be positive, got {c}")));
    }
    let u = m / rho;
    if !(u.abs() < c) {
        return Err(Error::DegenerateBasis(format!(
            "velocity |u| = {} is not subsonic for c = {c}",
            u.abs()
        )));
    }
    let inv = 1.0 / (2.0 * c);
    Ok(CharacteristicBasis {
        lambda: [u + c, u - c],
        right: [[1.0, u + c], [1.0, u - c]],
        left: [[(c - u) * inv, inv], [(c + u) * inv, -inv]],
    })
}

/// Families leaving the domain through a port with outward normal `normal`.
pub(crate) fn outgoing_families(basis: &CharacteristicBasis, normal: f64) -> [bool; 2] {
    [basis.lambda[0] * normal > 0.0, basis.lambda[1] * normal > 0.0]
}

/// Linear part of the direct non-reflecting update at a port with outward
/// normal `normal`, linearised about the reference state `(ρ₀, m₀)`.
pub(crate) fn nonreflecting_projector(
    normal: f64,
    reference: (f64, f64),
    c: f64,
) -> Result<[[f64; 2]; 2]> {
    let basis = characteristic_basis(reference.0, reference.1, c)?;
    Ok(basis.projector(outgoing_families(&basis, normal)))
}

/// Penalty matrix of the weak non-reflecting condition at a port,
/// `(1/(W_end dx)) Σ n λₖ rₖ lₖᵀ` over the incoming families (`n λₖ < 0`),
/// linearised about `reference`. The semi-discrete rate at the port gains
/// `M (q - q_ref)`, which drives the incoming amplitudes to zero.
pub(crate) fn nonreflecting_penalty(
    normal: f64,
    reference: (f64, f64),
    c: f64,
    w_end: f64,
    dx: f64,
) -> Result<[[f64; 2]; 2]> {
    let basis = characteristic_basis(reference.0, reference.1, c)?;
    let s = basis.lambda.map(|l| {
        let nl = normal * l;
        if nl < 0.0 {
            nl / (w_end * dx)
        } else {
            0.0
        }
    });
    Ok(basis.weighted(s))
}

/// Removes incoming characteristic content at an exterior port.
///
/// The deviation from the reference state is projected onto the
/// characteristic basis of the reference state; amplitudes of waves moving
/// into the pipe are set to zero, outgoing ones are kept.
pub fn apply_nonreflecting_direct(
    normal: f64,
    q_boundary: (f64, f64),
    q_reference: (f64, f64),
    c: f64,
) -> Result<(f64, f64)> {
    let p = nonreflecting_projector(normal, q_reference, c)?;
    let dq = matvec2(
        p,
        [q_boundary.0 - q_reference.0, q_boundary.1 - q_reference.1],
    );
    Ok((q_reference.0 + dq[0], q_reference.1 + dq[1]))
}
