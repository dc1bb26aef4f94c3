//! Diagonal-norm summation-by-parts (SBP) operators on uniform grids.
//!
//! The derivative is factored as `D = W⁻¹ S` with a diagonal norm `W` and an
//! almost skew-symmetric `S` satisfying `S + Sᵀ = B`, where `B` only carries
//! the two corner entries. `S` is stored pre-scaled by `1/dx`, so
//! `B = diag(-1/dx, 0, …, 0, 1/dx)`, while `W` is dimensionless and the
//! quadrature weight of grid point `i` is `W[i] * dx`.

use crate::error::{check_len, Error, Result};

/// Diagonal-norm SBP operator pair `(W, S)` for one uniform grid.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SbpOperator {
    order: usize,
    n: usize,
    dx: f64,
    /// Norm weights, dimensionless.
    w: Vec<f64>,
    /// Closure rows of `S` at the start of the grid (unscaled). The closure
    /// at the end is the antisymmetric mirror image.
    block: Vec<Vec<f64>>,
    /// Centered interior stencil of `S` (unscaled), odd length.
    stencil: Vec<f64>,
}

impl SbpOperator {
    /// Builds an operator of the given interior order of accuracy.
    ///
    /// Only the second-order operator (boundary rows `(-1/2, 1/2)`, weights
    /// `1/2` at the end points) is currently provided.
    pub fn new(order: usize, n: usize, dx: f64) -> Result<Self> {
        match order {
            2 => Self::second_order(n, dx),
            _ => Err(Error::invalid(format!(
                "SBP operator of order {order} is not available (supported: 2)"
            ))),
        }
    }

    /// Second-order operator: `W = diag(1/2, 1, …, 1, 1/2)`, centered
    /// interior rows and half-derivative boundary rows.
    pub fn second_order(n: usize, dx: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("SBP operator needs n >= 3, got {n}")));
        }
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::invalid(format!("grid spacing must be > 0, got {dx}")));
        }
        let mut w = vec![1.0; n];
        w[0] = 0.5;
        w[n - 1] = 0.5;
        Ok(Self {
            order: 2,
            n,
            dx,
            w,
            block: vec![vec![-0.5, 0.5]],
            stencil: vec![-0.5, 0.0, 0.5],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Norm weights `W[i]` (dimensionless).
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Norm weight of the first/last grid point.
    pub fn end_weight(&self) -> f64 {
        self.w[0]
    }

    /// Visits every nonzero `(row, col, value)` of the scaled `S`.
    pub fn for_each_s_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        let n = self.n;
        let inv_dx = 1.0 / self.dx;
        let nb = self.block.len();
        let half = self.stencil.len() / 2;
        for (i, row) in self.block.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    f(i, j, v * inv_dx);
                }
            }
        }
        for i in nb..n - nb {
            for (k, &v) in self.stencil.iter().enumerate() {
                if v != 0.0 {
                    f(i, i + k - half, v * inv_dx);
                }
            }
        }
        for (r, row) in self.block.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    f(n - 1 - r, n - 1 - j, -v * inv_dx);
                }
            }
        }
    }

    /// Dense copy of the scaled `S` (row-major), mostly for checks.
    pub fn s_dense(&self) -> Vec<Vec<f64>> {
        let mut s = vec![vec![0.0; self.n]; self.n];
        self.for_each_s_entry(|i, j, v| s[i][j] += v);
        s
    }

    /// Dense boundary matrix `B = S + Sᵀ` as implied by the construction.
    pub fn b_dense(&self) -> Vec<Vec<f64>> {
        let mut b = vec![vec![0.0; self.n]; self.n];
        b[0][0] = -1.0 / self.dx;
        b[self.n - 1][self.n - 1] = 1.0 / self.dx;
        b
    }

    /// `out = S v` without length checks.
    pub(crate) fn apply_s_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_dx = 1.0 / self.dx;
        let nb = self.block.len();
        let half = self.stencil.len() / 2;
        for (i, row) in self.block.iter().enumerate() {
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * inv_dx;
            out[n - 1 - i] = -row
                .iter()
                .enumerate()
                .map(|(j, a)| a * v[n - 1 - j])
                .sum::<f64>()
                * inv_dx;
        }
        if self.stencil.len() == 3 {
            let (a, b, c) = (self.stencil[0], self.stencil[1], self.stencil[2]);
            for i in nb..n - nb {
                out[i] = (a * v[i - 1] + b * v[i] + c * v[i + 1]) * inv_dx;
            }
        } else {
            for i in nb..n - nb {
                out[i] = self
                    .stencil
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * v[i + k - half])
                    .sum::<f64>()
                    * inv_dx;
            }
        }
    }

    /// `out = D v = W⁻¹ S v` without length checks.
    pub(crate) fn derivative_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_s_into(v, out);
        for (o, w) in out.iter_mut().zip(&self.w) {
            *o /= w;
        }
    }

    /// `out = W⁻¹ Sᵀ v`, the adjoint of `D` in the `W` inner product.
    ///
    /// Equals `-D v + W⁻¹ B v`.
    pub(crate) fn derivative_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each_s_entry(|i, j, s| out[j] += s * v[i]);
        for (o, w) in out.iter_mut().zip(&self.w) {
            *o /= w;
        }
    }

    /// Discrete derivative `D v = W⁻¹ S v`.
    pub fn apply_derivative(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_derivative", v.len(), self.n)?;
        let mut out = vec![0.0; self.n];
        self.derivative_into(v, &mut out);
        Ok(out)
    }

    /// `W`-adjoint of the derivative, `W⁻¹ Sᵀ v`.
    pub fn apply_derivative_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_derivative_adjoint", v.len(), self.n)?;
        let mut out = vec![0.0; self.n];
        self.derivative_adjoint_into(v, &mut out);
        Ok(out)
    }

    /// Quadrature `1ᵀ W v · dx`.
    pub fn integrate(&self, v: &[f64]) -> Result<f64> {
        check_len("integrate", v.len(), self.n)?;
        Ok(self.integrate_unchecked(v))
    }

    pub(crate) fn integrate_unchecked(&self, v: &[f64]) -> f64 {
        self.w.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() * self.dx
    }

    /// Norm inner product `uᵀ W v` (no `dx` factor).
    pub fn w_inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len("w_inner (u)", u.len(), self.n)?;
        check_len("w_inner (v)", v.len(), self.n)?;
        Ok(self
            .w
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    /// Discrete delta at grid index `j` (zero-based): `1 / (W[j] dx)` at `j`,
    /// zero elsewhere, so that it integrates to one.
    pub fn discrete_delta(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.n {
            return Err(Error::invalid(format!(
                "delta index {j} out of range for {} points",
                self.n
            )));
        }
        let mut d = vec![0.0; self.n];
        d[j] = 1.0 / (self.w[j] * self.dx);
        Ok(d)
    }
}

/// Defects of the discrete integration-by-parts identities, relative to the
/// magnitude of the summed terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    /// `⟨u, Dv⟩_W + ⟨Du, v⟩_W - (u_N v_N - u_1 v_1)/dx`.
    pub integration_by_parts: f64,
    /// `⟨1, Dv⟩_W - (v_N - v_1)/dx`.
    pub flux: f64,
    /// `max |S + Sᵀ - B| / max |S|`.
    pub boundary: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.integration_by_parts.max(self.flux).max(self.boundary)
    }
}

impl SbpOperator {
    /// Evaluates the SBP identities for the vectors `u` and `v`.
    pub fn identity_residuals(&self, u: &[f64], v: &[f64]) -> Result<IdentityResiduals> {
        check_len("identity_residuals (u)", u.len(), self.n)?;
        check_len("identity_residuals (v)", v.len(), self.n)?;
        let n = self.n;
        let du = self.apply_derivative(u)?;
        let dv = self.apply_derivative(v)?;
        let a = self.w_inner(u, &dv)?;
        let b = self.w_inner(&du, v)?;
        let bnd = (u[n - 1] * v[n - 1] - u[0] * v[0]) / self.dx;
        let mut scale = bnd.abs();
        for i in 0..n {
            scale += self.w[i] * ((u[i] * dv[i]).abs() + (du[i] * v[i]).abs());
        }
        let scale = scale.max(f64::MIN_POSITIVE);
        let ibp = (a + b - bnd).abs() / scale;

        let f = self.w_inner(&vec![1.0; n], &dv)?;
        let fb = (v[n - 1] - v[0]) / self.dx;
        let fscale: f64 = (0..n).map(|i| self.w[i] * dv[i].abs()).sum::<f64>() + fb.abs();
        let flux = (f - fb).abs() / fscale.max(f64::MIN_POSITIVE);

        let mut entries = std::collections::BTreeMap::new();
        let mut smax: f64 = 0.0;
        self.for_each_s_entry(|i, j, val| {
            smax = smax.max(val.abs());
            *entries.entry((i, j)).or_insert(0.0) += val;
            *entries.entry((j, i)).or_insert(0.0) += val;
        });
        *entries.entry((0, 0)).or_insert(0.0) += 1.0 / self.dx;
        *entries.entry((n - 1, n - 1)).or_insert(0.0) -= 1.0 / self.dx;
        let worst = entries.values().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(IdentityResiduals {
            integration_by_parts: ibp,
            flux,
            boundary: worst / smax,
        })
    }
}

/// Second-order SBP operator on `n` points with spacing `dx`.
pub fn build_sbp_second_order(n: usize, dx: f64) -> Result<SbpOperator> {
    SbpOperator::second_order(n, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn four_point_operator_matches_closed_form() {
        let op = build_sbp_second_order(4, 1.0).unwrap();
        assert_eq!(op.weights(), &[0.5, 1.0, 1.0, 0.5]);
        let expected = vec![
            vec![-0.5, 0.5, 0.0, 0.0],
            vec![-0.5, 0.0, 0.5, 0.0],
            vec![0.0, -0.5, 0.0, 0.5],
            vec![0.0, 0.0, -0.5, 0.5],
        ];
        assert_eq!(op.s_dense(), expected);
    }

    #[test]
    fn first_row_is_scaled_by_inverse_spacing() {
        let op = build_sbp_second_order(3, 0.5).unwrap();
        assert_eq!(op.s_dense()[0], vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_sbp_second_order(2, 1.0).is_err());
        assert!(build_sbp_second_order(5, 0.0).is_err());
        assert!(build_sbp_second_order(5, -1.0).is_err());
        assert!(SbpOperator::new(4, 10, 0.1).is_err());
        let op = build_sbp_second_order(5, 0.1).unwrap();
        assert!(op.apply_derivative(&[1.0; 4]).is_err());
        assert!(op.integrate(&[1.0; 6]).is_err());
        assert!(op.w_inner(&[1.0; 5], &[1.0; 4]).is_err());
        assert!(op.discrete_delta(5).is_err());
    }

    #[test]
    fn s_plus_transpose_is_boundary_matrix() {
        let n = 200;
        let op = build_sbp_second_order(n, 2.0 * std::f64::consts::PI / 199.0).unwrap();
        let s = op.s_dense();
        let b = op.b_dense();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(s[i][j] + s[j][i], b[i][j], "({i},{j})");
            }
        }
        assert!(op.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn derivative_of_constant_and_linear() {
        let op = build_sbp_second_order(4, 1.0).unwrap();
        assert_eq!(op.apply_derivative(&[3.0; 4]).unwrap(), vec![0.0; 4]);

        let dx = 0.37;
        let op = build_sbp_second_order(9, dx).unwrap();
        let v: Vec<f64> = (0..9).map(|i| i as f64 * dx).collect();
        for d in op.apply_derivative(&v).unwrap() {
            assert!((d - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_matches_dense_product() {
        let op = build_sbp_second_order(7, 0.3).unwrap();
        let v = pseudo_random(7, 3);
        let sv = dense_matvec(&op.s_dense(), &v);
        let expected: Vec<f64> = sv.iter().zip(op.weights()).map(|(a, w)| a / w).collect();
        let got = op.apply_derivative(&v).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_adjoint_matches_dense_transpose() {
        let op = build_sbp_second_order(8, 0.2).unwrap();
        let v = pseudo_random(8, 9);
        let s = op.s_dense();
        let st: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| s[j][i]).collect()).collect();
        let stv = dense_matvec(&st, &v);
        let got = op.apply_derivative_adjoint(&v).unwrap();
        for i in 0..8 {
            assert!((got[i] - stv[i] / op.weights()[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn quadrature_and_delta() {
        let op = build_sbp_second_order(5, 0.5).unwrap();
        assert_eq!(op.integrate(&[1.0; 5]).unwrap(), 2.0);
        for j in 0..5 {
            let d = op.discrete_delta(j).unwrap();
            assert!((op.integrate(&d).unwrap() - 1.0).abs() < 1e-15);
        }

        let op = build_sbp_second_order(11, 0.1).unwrap();
        let d = op.discrete_delta(4).unwrap();
        assert!((d[4] - 10.0).abs() < 1e-12);
        assert_eq!(d.iter().filter(|&&x| x != 0.0).count(), 1);
        let d = op.discrete_delta(0).unwrap();
        assert!((d[0] - 20.0).abs() < 1e-12);

        let v = pseudo_random(11, 5);
        let direct: f64 = v
            .iter()
            .enumerate()
            .map(|(i, x)| if i == 0 || i == 10 { 0.5 * x } else { *x })
            .sum::<f64>()
            * 0.1;
        assert!((op.integrate(&v).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn inner_product_identities() {
        let op = build_sbp_second_order(6, 0.25).unwrap();
        let mut e1 = vec![0.0; 6];
        e1[0] = 1.0;
        assert_eq!(op.w_inner(&e1, &e1).unwrap(), 0.5);

        // <1, D w>_W = (w_N - w_1) / dx with S scaled by 1/dx
        let w = pseudo_random(6, 11);
        let dw = op.apply_derivative(&w).unwrap();
        let lhs = op.w_inner(&[1.0; 6], &dw).unwrap();
        assert!((lhs - (w[5] - w[0]) / 0.25).abs() < 1e-13);

        let u = pseudo_random(6, 12);
        let dense: f64 = (0..6).map(|i| u[i] * op.weights()[i] * w[i]).sum();
        assert!((op.w_inner(&u, &w).unwrap() - dense).abs() < 1e-15);
    }
}
