//! The discrete energy `f(u) = Σ_c w_c [ j(ū_c, |Du|_c) + |ū_c|ᵖ/p − |ū_c|^q/q ]`,
//! its directional derivative and the nodal Euler-Lagrange residual.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Domain, GridFunction};
use crate::group::SymmetryGroup;
use crate::integrand::Integrand;
use crate::par::map_indexed;

#[derive(Clone, Debug)]
pub struct EnergyModel {
    domain: Arc<Domain>,
    integrand: Arc<dyn Integrand>,
    p: f64,
    q: f64,
    group: Option<Arc<SymmetryGroup>>,
    positivity: bool,
}

/// Pointwise data of one cell at a given state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState {
    pub mean: f64,
    pub grad: f64,
    /// Coefficient of `Du·Dv` in the derivative: `j_t(ū, t)/t`, zero when `t = 0`.
    pub grad_coeff: f64,
    /// Coefficient of `v̄` in the derivative.
    pub mean_coeff: f64,
}

/// Sobolev critical exponent `Np/(N − p)`.
pub fn critical_exponent(n: usize, p: f64) -> f64 {
    n as f64 * p / (n as f64 - p)
}

impl EnergyModel {
    pub fn new(
        domain: &Arc<Domain>,
        integrand: Arc<dyn Integrand>,
        q: f64,
        group: Option<Arc<SymmetryGroup>>,
        positivity: bool,
    ) -> Result<Self> {
        let p = integrand.p();
        let n = domain.dimension();
        if !(p > 1.0 && p < n as f64) {
            return Err(Error::Parameter(format!("need 1 < p < N, got p = {p}, N = {n}")));
        }
        let p_star = critical_exponent(n, p);
        if !(q > p && q < p_star) {
            return Err(Error::Parameter(format!(
                "need p < q < p* = Np/(N-p), got p = {p}, q = {q}, p* = {p_star}"
            )));
        }
        if let Some(g) = &group {
            if !Arc::ptr_eq(g.domain(), domain) {
                return Err(Error::Usage("symmetry group was built on a different domain".into()));
            }
        }
        Ok(EnergyModel {
            domain: Arc::clone(domain),
            integrand,
            p,
            q,
            group,
            positivity,
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }
    pub fn integrand(&self) -> &Arc<dyn Integrand> {
        &self.integrand
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn group(&self) -> Option<&Arc<SymmetryGroup>> {
        self.group.as_ref()
    }
    pub fn positivity(&self) -> bool {
        self.positivity
    }

    /// Lower-order density `|s|ᵖ/p − G(s)`.
    #[inline]
    fn lower(&self, s: f64) -> f64 {
        let g = if self.positivity {
            s.max(0.0).powf(self.q) / self.q
        } else {
            s.abs().powf(self.q) / self.q
        };
        s.abs().powf(self.p) / self.p - g
    }

    /// Derivative of the lower-order density.
    #[inline]
    fn lower_prime(&self, s: f64) -> f64 {
        let a = signed_pow(s, self.p - 1.0);
        let g = if self.positivity {
            s.max(0.0).powf(self.q - 1.0)
        } else {
            signed_pow(s, self.q - 1.0)
        };
        a - g
    }

    pub fn energy(&self, u: &GridFunction) -> Result<f64> {
        u.check_domain(&self.domain)?;
        Ok(self.energy_values(u.values()))
    }

    pub fn energy_values(&self, u: &[f64]) -> f64 {
        let cells = self.domain.cells();
        let j = &*self.integrand;
        let dens = map_indexed(cells.len(), |c| {
            let cell = &cells[c];
            let m = cell.mean_value(u);
            let t = cell.grad_sq(u).sqrt();
            cell.weight * (j.j(m, t) + self.lower(m))
        });
        dens.iter().sum()
    }

    /// `(f(u), Σ_c |w_c · density_c|)`; the second value bounds the rounding error of the first.
    pub fn energy_with_magnitude(&self, u: &[f64]) -> (f64, f64) {
        let cells = self.domain.cells();
        let j = &*self.integrand;
        let dens = map_indexed(cells.len(), |c| {
            let cell = &cells[c];
            let m = cell.mean_value(u);
            let t = cell.grad_sq(u).sqrt();
            let jj = j.j(m, t);
            let lo = self.lower(m);
            (cell.weight * (jj + lo), cell.weight * (jj.abs() + lo.abs()))
        });
        (dens.iter().map(|d| d.0).sum(), dens.iter().map(|d| d.1).sum())
    }

    pub fn cell_states(&self, u: &[f64]) -> Vec<CellState> {
        let cells = self.domain.cells();
        let j = &*self.integrand;
        map_indexed(cells.len(), |c| {
            let cell = &cells[c];
            let mean = cell.mean_value(u);
            let grad = cell.grad_sq(u).sqrt();
            let grad_coeff = if grad > 0.0 { j.j_t(mean, grad) / grad } else { 0.0 };
            CellState {
                mean,
                grad,
                grad_coeff,
                mean_coeff: j.j_s(mean, grad) + self.lower_prime(mean),
            }
        })
    }

    /// `f′(u)v`, with `j_t(u,|Du|) Du/|Du|` taken as zero on cells where `Du = 0`.
    pub fn directional_derivative(&self, u: &GridFunction, v: &GridFunction) -> Result<f64> {
        u.check_domain(&self.domain)?;
        v.check_domain(&self.domain)?;
        Ok(self.dd_values(u.values(), v.values()))
    }

    pub fn dd_values(&self, u: &[f64], v: &[f64]) -> f64 {
        let states = self.cell_states(u);
        self.dd_with_states(&states, u, v)
    }

    pub(crate) fn dd_with_states(&self, states: &[CellState], u: &[f64], v: &[f64]) -> f64 {
        let cells = self.domain.cells();
        let terms = map_indexed(cells.len(), |c| {
            let cell = &cells[c];
            let st = &states[c];
            cell.weight * (st.grad_coeff * cell.grad_dot(u, v) + st.mean_coeff * cell.mean_value(v))
        });
        terms.iter().sum()
    }

    /// Nodal residual `r_i = f′(u) e_i`, with zeros on the boundary.
    pub fn residual(&self, u: &GridFunction) -> Result<GridFunction> {
        u.check_domain(&self.domain)?;
        Ok(GridFunction::from_raw(&self.domain, self.residual_values(u.values())))
    }

    pub fn residual_values(&self, u: &[f64]) -> Vec<f64> {
        let states = self.cell_states(u);
        self.residual_with_states(&states, u)
    }

    pub(crate) fn residual_with_states(&self, states: &[CellState], u: &[f64]) -> Vec<f64> {
        let d = &*self.domain;
        let cells = d.cells();
        let form_vals: Vec<Vec<f64>> = map_indexed(cells.len(), |c| {
            cells[c].forms.iter().map(|f| f.apply(u)).collect()
        });
        let node_cells = d.node_cells();
        let boundary = d.boundary();
        map_indexed(d.len(), |i| {
            if boundary[i] {
                return 0.0;
            }
            let mut acc = 0.0;
            for &c in &node_cells[i] {
                let cell = &cells[c];
                let st = &states[c];
                let mut gd = 0.0;
                for (f, &lu) in cell.forms.iter().zip(&form_vals[c]) {
                    let li: f64 = f.terms.iter().filter(|t| t.0 == i).map(|t| t.1).sum();
                    gd += f.kappa * lu * li;
                }
                let mi: f64 = cell.mean.iter().filter(|t| t.0 == i).map(|t| t.1).sum();
                acc += cell.weight * (st.grad_coeff * gd + st.mean_coeff * mi);
            }
            acc
        })
    }

    /// `(f′(u)ṽ, ‖u⁻‖_p)` for the test field `ṽ = −u⁻ e^{ζ(u)}`.
    pub fn positivity_certificate(&self, u: &GridFunction, m: f64, r: f64) -> Result<(f64, f64)> {
        u.check_domain(&self.domain)?;
        let z = zeta(u, m, r)?;
        let neg: Vec<f64> = u.values().iter().map(|&x| (-x).max(0.0)).collect();
        let v: Vec<f64> = neg.iter().zip(&z).map(|(&n, &zz)| -n * zz.exp()).collect();
        let value = self.dd_values(u.values(), &v);
        Ok((value, self.domain.lm_norm(&neg, self.p)))
    }
}

#[inline]
fn signed_pow(s: f64, e: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.signum() * s.abs().powf(e)
    }
}

/// `T_k(s) = max(−k, min(k, s))` nodewise.
pub fn truncate(u: &GridFunction, k: f64) -> Result<GridFunction> {
    if !(k >= 1.0) {
        return Err(Error::Parameter(format!("truncation level needs k >= 1, got {k}")));
    }
    Ok(GridFunction::from_raw(
        u.domain(),
        u.values().iter().map(|&s| s.clamp(-k, k)).collect(),
    ))
}

/// Scalar C¹ bump: 1 on `[−1, 1]`, 0 outside `[−2, 2]`, smoothstep in between.
pub fn bump_h(s: f64) -> f64 {
    let x = s.abs() - 1.0;
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        1.0 - x * x * (3.0 - 2.0 * x)
    }
}

/// Nodal weights `H(u_i / k)`.
pub fn cutoff_h(u: &GridFunction, k: f64) -> Result<Vec<f64>> {
    if !(k >= 1.0) {
        return Err(Error::Parameter(format!("cut-off level needs k >= 1, got {k}")));
    }
    Ok(u.values().iter().map(|&s| bump_h(s / k)).collect())
}

/// `ζ(s) = M min(|s|, R)` nodewise.
pub fn zeta(u: &GridFunction, m: f64, r: f64) -> Result<Vec<f64>> {
    if !(m > 0.0 && r > 0.0) {
        return Err(Error::Parameter(format!("ζ needs M > 0 and R > 0, got M = {m}, R = {r}")));
    }
    Ok(u.values().iter().map(|&s| m * s.abs().min(r)).collect())
}
