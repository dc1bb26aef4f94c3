//! Junction coupling: control fluxes enforcing equal density (pressure) and
//! the Kirchhoff mass balance at every junction, and the equivalent sparse
//! coupling matrix `C` with `Q̇ = (I + C) Q̃̇`.
//!
//! Both conditions are imposed on rates: if they hold initially, they keep
//! holding because every corrected rate satisfies their time derivative.

use crate::error::{check_len, Error, Result};
use crate::network::{Network, Variable};
use crate::sbp::SbpOperator;

/// Geometry of one junction port as seen by the coupling formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortGeometry {
    pub area: f64,
    pub dx: f64,
    /// SBP norm weight of the pipe's end point.
    pub w_end: f64,
    /// Outward normal, `-1` at a pipe start and `+1` at a pipe end.
    pub normal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCorrection {
    /// Common density rate `∂t ρ̄` of the junction.
    pub density_rate: f64,
    /// Corrected `∂t(ρA)` per port, `A · ∂t ρ̄`.
    pub corrected: Vec<f64>,
    /// Control fluxes `f_ρ · n` per port; they sum to zero.
    pub flux_n: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumCorrection {
    /// Shared momentum control flux `f̄_m`.
    pub flux: f64,
    /// Kirchhoff rate defect `Σ W ∂̃t(ρuA) n` before correction.
    pub defect: f64,
    /// Corrected `∂t(ρuA)` per port.
    pub corrected: Vec<f64>,
}

fn check_ports(ports: &[PortGeometry], rates: &[f64]) -> Result<()> {
    if ports.is_empty() {
        return Err(Error::invalid("junction has no ports"));
    }
    check_len("junction rates", rates.len(), ports.len())?;
    for p in ports {
        if !(p.area > 0.0 && p.dx > 0.0 && p.w_end > 0.0) {
            return Err(Error::invalid(format!("invalid port geometry {p:?}")));
        }
    }
    Ok(())
}

/// Equal-density correction of the `ρA` rates at one junction.
///
/// The common rate is the `W dx`-weighted mean
/// `∂t ρ̄ = Σ W dx ∂̃t(ρA) / Σ W dx A`, which keeps the junction mass
/// unchanged; each port's rate is replaced by `A ∂t ρ̄`.
pub fn density_corrections(ports: &[PortGeometry], rates: &[f64]) -> Result<DensityCorrection> {
    check_ports(ports, rates)?;
    let num: f64 = ports.iter().zip(rates).map(|(p, r)| p.w_end * p.dx * r).sum();
    let den: f64 = ports.iter().map(|p| p.w_end * p.dx * p.area).sum();
    let density_rate = num / den;
    let corrected: Vec<f64> = ports.iter().map(|p| p.area * density_rate).collect();
    let flux_n = ports
        .iter()
        .zip(rates.iter().zip(&corrected))
        .map(|(p, (r, c))| p.w_end * p.dx * (c - r))
        .collect();
    Ok(DensityCorrection {
        density_rate,
        corrected,
        flux_n,
    })
}

/// Kirchhoff correction of the `ρuA` rates at one junction with a single
/// shared control flux `f̄_m`.
///
/// Port `j` receives `f̄_m n_j / (W_j dx_j)`; with `n_j² = 1` the corrected
/// rates satisfy `Σ W ∂t(ρuA) n = 0` when `f̄_m = -Σ W ∂̃t(ρuA) n / Σ 1/dx`.
pub fn momentum_correction(ports: &[PortGeometry], rates: &[f64]) -> Result<MomentumCorrection> {
    check_ports(ports, rates)?;
    let defect: f64 = ports.iter().zip(rates).map(|(p, r)| p.w_end * r * p.normal).sum();
    let inv_dx: f64 = ports.iter().map(|p| 1.0 / p.dx).sum();
    let flux = -defect / inv_dx;
    let corrected = ports
        .iter()
        .zip(rates)
        .map(|(p, r)| r + flux * p.normal / (p.w_end * p.dx))
        .collect();
    Ok(MomentumCorrection {
        flux,
        defect,
        corrected,
    })
}

/// Port geometries of junction `k`, in the junction's port order.
pub fn junction_ports(net: &Network, ops: &[SbpOperator], k: usize) -> Vec<PortGeometry> {
    net.junctions()[k]
        .ports
        .iter()
        .map(|port| {
            let pipe = &net.pipes()[port.pipe];
            PortGeometry {
                area: pipe.area,
                dx: pipe.dx(),
                w_end: ops[port.pipe].end_weight(),
                normal: port.normal(),
            }
        })
        .collect()
}

/// Applies both corrections junction by junction, in place (formula path).
pub fn apply_junction_corrections(
    net: &Network,
    ops: &[SbpOperator],
    rates: &mut [f64],
) -> Result<()> {
    check_len("rate vector", rates.len(), net.dof())?;
    check_len("operators", ops.len(), net.pipes().len())?;
    for (k, junction) in net.junctions().iter().enumerate() {
        let geo = junction_ports(net, ops, k);
        let rho_idx: Vec<usize> = junction
            .ports
            .iter()
            .map(|p| net.port_index(*p, Variable::RhoA))
            .collect();
        let m_idx: Vec<usize> = junction
            .ports
            .iter()
            .map(|p| net.port_index(*p, Variable::MA))
            .collect();
        let rho_rates: Vec<f64> = rho_idx.iter().map(|&i| rates[i]).collect();
        let m_rates: Vec<f64> = m_idx.iter().map(|&i| rates[i]).collect();
        let dc = density_corrections(&geo, &rho_rates)?;
        let mc = momentum_correction(&geo, &m_rates)?;
        for (i, v) in rho_idx.iter().zip(dc.corrected) {
            rates[*i] = v;
        }
        for (i, v) in m_idx.iter().zip(mc.corrected) {
            rates[*i] = v;
        }
    }
    Ok(())
}

/// Sparse coupling matrix `C` in coordinate form, rows and columns indexed
/// by [`Network::global_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CouplingMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nonzero `(row, col, value)` triplets, sorted by row then column.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `out = v + C v`.
    pub(crate) fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        for &(r, c, val) in &self.entries {
            out[r] += val * v[c];
        }
    }

    /// `out = v + Cᵀ v`.
    pub(crate) fn apply_transpose_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        for &(r, c, val) in &self.entries {
            out[c] += val * v[r];
        }
    }

    /// `(I + Cᵀ) v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_transpose", v.len(), self.dim)?;
        let mut out = vec![0.0; self.dim];
        self.apply_transpose_into(v, &mut out);
        Ok(out)
    }

    /// Coordinate-format text (`row col value` per line) for sparsity plots.
    pub fn to_triplets(&self) -> String {
        let mut s = String::from("# row col value\n");
        for (r, c, v) in &self.entries {
            s.push_str(&format!("{r} {c} {v:.16e}\n"));
        }
        s
    }
}

/// Builds `C` so that `(I + C) Q̃̇` equals the per-junction corrections.
///
/// Entries only depend on topology, areas, grid spacings and SBP end weights.
pub fn assemble_coupling_matrix(net: &Network, ops: &[SbpOperator]) -> Result<CouplingMatrix> {
    check_len("operators", ops.len(), net.pipes().len())?;
    let mut entries = Vec::new();
    for (k, junction) in net.junctions().iter().enumerate() {
        let geo = junction_ports(net, ops, k);
        let den: f64 = geo.iter().map(|p| p.w_end * p.dx * p.area).sum();
        let inv_dx: f64 = geo.iter().map(|p| 1.0 / p.dx).sum();
        for (j, pj) in junction.ports.iter().enumerate() {
            let gj = geo[j];
            let rj = net.port_index(*pj, Variable::RhoA);
            let mj = net.port_index(*pj, Variable::MA);
            for (l, pl) in junction.ports.iter().enumerate() {
                let gl = geo[l];
                let delta = if j == l { 1.0 } else { 0.0 };
                let rho_val = gj.area * gl.w_end * gl.dx / den - delta;
                if rho_val != 0.0 {
                    entries.push((rj, net.port_index(*pl, Variable::RhoA), rho_val));
                }
                let m_val = -gj.normal * gl.w_end * gl.normal / (gj.w_end * gj.dx * inv_dx);
                if m_val != 0.0 {
                    entries.push((mj, net.port_index(*pl, Variable::MA), m_val));
                }
            }
        }
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(CouplingMatrix {
        dim: net.dof(),
        entries,
    })
}

/// `Q̃̇ + C Q̃̇`.
pub fn apply_coupling(c: &CouplingMatrix, rhs_tilde: &[f64]) -> Result<Vec<f64>> {
    check_len("apply_coupling", rhs_tilde.len(), c.dim)?;
    let mut out = vec![0.0; c.dim];
    c.apply_into(rhs_tilde, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn port(area: f64, dx: f64, normal: f64) -> PortGeometry {
        PortGeometry {
            area,
            dx,
            w_end: 0.5,
            normal,
        }
    }

    #[test]
    fn two_port_density_example() {
        let ports = [port(1.0, 0.1, 1.0), port(1.0, 0.1, -1.0)];
        let dc = density_corrections(&ports, &[2.0, 0.0]).unwrap();
        assert!((dc.density_rate - 1.0).abs() < 1e-15);
        for c in &dc.corrected {
            assert!((c - 1.0).abs() < 1e-15);
        }
        assert!((dc.flux_n[0] + 0.05).abs() < 1e-15);
        assert!((dc.flux_n[1] - 0.05).abs() < 1e-15);
        assert!(dc.flux_n.iter().sum::<f64>().abs() < 1e-16);
    }

    #[test]
    fn equal_rates_are_a_fixed_point() {
        let ports = [port(1.0, 0.1, 1.0), port(1.0, 0.2, -1.0), port(1.0, 0.05, -1.0)];
        let dc = density_corrections(&ports, &[0.3, 0.3, 0.3]).unwrap();
        assert!(dc.flux_n.iter().all(|f| f.abs() < 1e-16));
        assert!(dc.corrected.iter().all(|c| (c - 0.3).abs() < 1e-15));
    }

    #[test]
    fn three_port_area_weighting() {
        let ports = [port(1.0, 0.1, 1.0), port(2.0, 0.1, -1.0), port(1.0, 0.1, -1.0)];
        let dc = density_corrections(&ports, &[4.0, 0.0, 0.0]).unwrap();
        assert!((dc.density_rate - 1.0).abs() < 1e-15);
        let expected = [1.0, 2.0, 1.0];
        for (c, e) in dc.corrected.iter().zip(expected) {
            assert!((c - e).abs() < 1e-15);
        }
        assert!(dc.flux_n.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn two_port_momentum_example() {
        let ports = [port(1.0, 0.1, 1.0), port(1.0, 0.1, -1.0)];
        let mc = momentum_correction(&ports, &[3.0, 1.0]).unwrap();
        assert!((mc.defect - 1.0).abs() < 1e-15);
        assert!((mc.flux + 0.05).abs() < 1e-15);
        for c in &mc.corrected {
            assert!((c - 2.0).abs() < 1e-14);
        }
        let after: f64 = ports
            .iter()
            .zip(&mc.corrected)
            .map(|(p, r)| p.w_end * r * p.normal)
            .sum();
        assert!(after.abs() < 1e-15);
    }

    #[test]
    fn balanced_momentum_rates_are_untouched_and_linear() {
        let ports = [port(1.0, 0.1, 1.0), port(1.0, 0.1, -1.0)];
        let mc = momentum_correction(&ports, &[1.5, 1.5]).unwrap();
        assert_eq!(mc.flux, 0.0);
        assert_eq!(mc.corrected, vec![1.5, 1.5]);

        let ports = [port(1.0, 0.1, 1.0), port(2.0, 0.3, -1.0), port(1.0, 0.2, -1.0)];
        let rates = [0.4, -1.2, 2.0];
        let base = momentum_correction(&ports, &rates).unwrap();
        let scaled: Vec<f64> = rates.iter().map(|r| -3.5 * r).collect();
        let s = momentum_correction(&ports, &scaled).unwrap();
        assert!((s.flux + 3.5 * base.flux).abs() < 1e-14);
    }

    #[test]
    fn empty_junction_is_rejected() {
        assert!(density_corrections(&[], &[]).is_err());
        assert!(momentum_correction(&[], &[]).is_err());
    }
}
