//! Mountain-pass search on a discrete path with fixed endpoints.
//!
//! The path `u⁰ = 0, u¹, …, uᵐ = e` is improved one point at a time: the
//! point of largest energy takes a descent step in the metric
//! `K(u) = Σ_c w_c j_t(ū,|Du|)/|Du| · Du·Dv + Σ_i w_i |u_i|^{p−2} u_i v_i`
//! (the frozen-coefficient operator of the Euler-Lagrange equation). Points
//! created by maximizing the energy along a ray from the origin are kept on
//! that ridge, which turns the iteration into a descent on the set where
//! `f′(u)u = 0`; any step is accepted only if the path maximum does not rise.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::EnergyModel;
use crate::grid::{Domain, DomainKind, GridFunction};
use crate::group::SymmetryGroup;
use crate::symmetrize::{check_energy_monotonicity, schwarz_values, MonotonicityCheck};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plain,
    Restricted,
    Direct,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "restricted" => Ok(Mode::Restricted),
            "direct" => Ok(Mode::Direct),
            other => Err(Error::config("solver.mode", format!("unknown mode `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Restricted => "restricted",
            Mode::Direct => "direct",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub mode: Mode,
    /// Number of path segments `m`; the path has `m + 1` points.
    pub path_points: usize,
    pub max_iterations: usize,
    /// Stopping threshold `τ_g` on the mode-relevant residual dual norm.
    pub tolerance: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub seed: u64,
    pub log: bool,
    /// Bound used by the Palais-Smale boundedness diagnostic.
    pub w1p_ceiling: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            mode: Mode::Restricted,
            path_points: 16,
            max_iterations: 2000,
            tolerance: 1e-9,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            seed: 0,
            log: false,
            w1p_ceiling: 1e6,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.path_points < 8 {
            return Err(Error::config("solver.path_points", format!("need m >= 8, got {}", self.path_points)));
        }
        for (field, v) in [
            ("solver.tolerance", self.tolerance),
            ("solver.initial_step", self.initial_step),
            ("solver.armijo", self.armijo),
            ("solver.w1p_ceiling", self.w1p_ceiling),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::config("solver.shrink", format!("must lie in (0, 1), got {}", self.shrink)));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("solver.max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Mountain-pass geometry established before the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub psi: Vec<f64>,
    pub rho0: f64,
    pub sigma0: f64,
    /// Smallest `τ` meeting both geometric inequalities; `e = 2 τ_min ψ`.
    pub tau_min: f64,
    pub tau: f64,
    pub e: Vec<f64>,
    pub energy_e: f64,
    pub w1p_e: f64,
    pub sphere_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsEntry {
    pub iteration: usize,
    /// Index of the path point of largest energy.
    pub point: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub w1p_norm: f64,
    pub dist_vstar_v: f64,
    pub dist_vstar_w: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PsRecord {
    pub entries: Vec<PsEntry>,
    /// The max-energy point at each iteration.
    #[serde(skip)]
    pub iterates: Vec<Vec<f64>>,
}

pub const PS_CSV_HEADER: &str = "iteration,f,grad_norm,w1p_norm,dist_vstar_V,dist_vstar_W";

impl PsRecord {
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{PS_CSV_HEADER}")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                e.iteration, e.f, e.grad_norm, e.w1p_norm, e.dist_vstar_v, e.dist_vstar_w
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub requested_mode: Mode,
    pub converged: bool,
    pub iterations: usize,
    /// Mountain-pass level estimate: the final path maximum.
    pub level: f64,
    pub residual_norm: f64,
    pub u: Vec<f64>,
    pub record: PsRecord,
    pub endpoints: Endpoints,
    pub hypothesis_check: Option<MonotonicityCheck>,
    pub warnings: Vec<String>,
    pub config: SolveConfig,
    pub config_hash: Option<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// `G`-invariant positive bump vanishing on the boundary, with `max ψ = 1`.
pub fn default_psi(domain: &Domain, group: Option<&SymmetryGroup>) -> Vec<f64> {
    use std::f64::consts::PI;
    let spec = domain.spec();
    let (l, r_in) = (spec.extent, spec.inner_radius);
    let psi: Vec<f64> = (0..domain.len())
        .map(|i| {
            if domain.boundary()[i] {
                return 0.0;
            }
            let [x, y] = domain.coords()[i];
            let r = domain.radius(i);
            match spec.kind {
                DomainKind::Square => (PI * x / l).cos() * (PI * y / l).cos(),
                DomainKind::DiskPolar => (0.5 * PI * r / l).cos(),
                DomainKind::AnnulusPolar => (PI * (r - r_in) / (l - r_in)).sin(),
                DomainKind::RadialBall1d => (1.0 - (r / l).powi(2)) * (-0.5 * r * r).exp(),
            }
        })
        .collect();
    let psi = match group {
        Some(g) => g.average_values(&psi),
        None => psi,
    };
    let m = psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    psi.iter().map(|v| v / m).collect()
}

fn fix_project(group: Option<&SymmetryGroup>, v: Vec<f64>) -> Vec<f64> {
    match group {
        Some(g) => g.average_values(&v),
        None => v,
    }
}

/// Upper envelope `α(s)`: declared, or the sampled sup of `j(s′, t)/tᵖ` over `|s′| ≤ s`.
fn alpha_at(model: &EnergyModel, s: f64) -> f64 {
    let j = model.integrand();
    if let Some(a) = j.alpha(s) {
        return a;
    }
    let p = model.p();
    let mut best: f64 = 0.0;
    for a in 0..=40 {
        let sv = -s + 2.0 * s * a as f64 / 40.0;
        for b in 0..60 {
            let t = (1e-3f64.ln() + (1e6f64.ln()) * b as f64 / 59.0).exp();
            best = best.max(j.j(sv, t) / t.powf(p));
        }
    }
    best
}

/// Builds `ψ`, `ρ₀`, `σ₀`, `τ` and `e = τψ`, then checks `f(e) < 0` and `‖e‖_{1,p} > ρ₀`.
pub fn init_endpoints(model: &EnergyModel, psi: Option<&GridFunction>, seed: u64) -> Result<Endpoints> {
    let d = &**model.domain();
    let group = model.group().map(|g| &**g);
    let (p, q) = (model.p(), model.q());
    let psi: Vec<f64> = match psi {
        Some(u) => {
            u.check_domain(model.domain())?;
            let v = fix_project(group, u.values().to_vec());
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Geometry("ψ projects to zero on the fixed-point space".into()));
            }
            v
        }
        None => default_psi(d, group),
    };
    let psi_w1p = d.w1p_norm(&psi, p);

    // ρ₀: halve the sphere radius until f is positive on every sample
    let samples = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..samples)
        .map(|k| {
            let v = if k == 0 {
                psi.clone()
            } else {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(0.0..1.0);
                let raw: Vec<f64> = (0..d.len())
                    .map(|i| {
                        let xi: f64 = rng.gen_range(-1.0..1.0);
                        if d.boundary()[i] { 0.0 } else { a * psi[i] + b * xi }
                    })
                    .collect();
                fix_project(group, raw)
            };
            let n = d.w1p_norm(&v, p);
            if n > 0.0 { v.iter().map(|x| x / n).collect() } else { psi.iter().map(|x| x / psi_w1p).collect() }
        })
        .collect();
    let mut rho = psi_w1p;
    let mut found = None;
    for _ in 0..60 {
        let min_f = dirs
            .iter()
            .map(|v| {
                let w: Vec<f64> = v.iter().map(|x| rho * x).collect();
                model.energy_values(&w)
            })
            .fold(f64::INFINITY, f64::min);
        if min_f > 0.0 && min_f.is_finite() {
            found = Some((rho, min_f));
            break;
        }
        rho *= 0.5;
    }
    let (rho0, sigma0) = found.ok_or_else(|| {
        Error::Geometry(format!(
            "no sphere radius with positive infimum found down to {rho:e}; p = {p}, q = {q} or the truncation may be unsuitable"
        ))
    })?;

    let psi_inf = psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lp = d.lm_norm(&psi, p).powf(p);
    let lq = d.lm_norm(&psi, q).powf(q);
    let dp = d.grad_p_pow(&psi, p);
    let first = |tau: f64| alpha_at(model, tau * psi_inf) * tau.powf(p) <= lq / dp * tau.powf(q) / (2.0 * q);
    let mut hi = 1e-3;
    while !first(hi) {
        hi *= 1.1;
        if hi > 1e12 {
            return Err(Error::Geometry("growth envelope never falls below the q-power term".into()));
        }
    }
    let tau1 = if hi <= 1e-3 {
        hi
    } else {
        let mut lo = hi / 1.1;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if first(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let tau2 = (2.0 * q / p * lp / lq).powf(1.0 / (q - p));
    let tau3 = rho0 / psi_w1p;
    let tau_min = tau1.max(tau2).max(tau3);
    let tau = 2.0 * tau_min;
    let e: Vec<f64> = psi.iter().map(|x| tau * x).collect();
    let energy_e = model.energy_values(&e);
    let w1p_e = d.w1p_norm(&e, p);
    if !(energy_e < 0.0) {
        return Err(Error::Geometry(format!("f(e) = {energy_e} is not negative at τ = {tau}")));
    }
    if !(w1p_e > rho0) {
        return Err(Error::Geometry(format!("‖e‖ = {w1p_e} does not exceed ρ₀ = {rho0}")));
    }
    Ok(Endpoints {
        psi,
        rho0,
        sigma0,
        tau_min,
        tau,
        e,
        energy_e,
        w1p_e,
        sphere_samples: samples,
    })
}

/// Maximizer `s* > 0` of `s ↦ f(s w)` and the value there; `None` if the
/// energy does not turn down along the ray.
pub fn ray_max(model: &EnergyModel, w: &[f64]) -> Option<(f64, f64)> {
    let dphi = |s: f64| {
        let sw: Vec<f64> = w.iter().map(|x| s * x).collect();
        model.dd_values(&sw, w)
    };
    let (mut lo, mut hi);
    let (mut dlo, mut dhi);
    let d1 = dphi(1.0);
    if !d1.is_finite() {
        return None;
    }
    if d1 > 0.0 {
        lo = 1.0;
        dlo = d1;
        hi = 2.0;
        dhi = dphi(hi);
        while dhi > 0.0 {
            lo = hi;
            dlo = dhi;
            hi *= 2.0;
            if hi > 1e8 || !dhi.is_finite() {
                return None;
            }
            dhi = dphi(hi);
        }
    } else {
        hi = 1.0;
        dhi = d1;
        lo = 0.5;
        dlo = dphi(lo);
        while dlo <= 0.0 {
            hi = lo;
            dhi = dlo;
            lo *= 0.5;
            if lo < 1e-10 {
                return None;
            }
            dlo = dphi(lo);
        }
    }
    // Illinois variant of regula falsi on φ′; φ′(lo) > 0 ≥ φ′(hi)
    let mut side = 0i8;
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        s = (lo * dhi - hi * dlo) / (dhi - dlo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let ds = dphi(s);
        if ds == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        if ds > 0.0 {
            lo = s;
            dlo = ds;
            if side == 1 {
                dhi *= 0.5;
            }
            side = 1;
        } else {
            hi = s;
            dhi = ds;
            if side == -1 {
                dlo *= 0.5;
            }
            side = -1;
        }
    }
    let sw: Vec<f64> = w.iter().map(|x| s * x).collect();
    Some((s, model.energy_values(&sw)))
}

/// Sparse pattern of the metric `K` on free nodes.
struct Metric {
    free: Vec<usize>,
    local: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    diag: Vec<usize>,
    /// `[cell][form]` → `(value index, coefficient product)`.
    entries: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Metric {
    fn new(d: &Domain) -> Self {
        let free = d.free_nodes().to_vec();
        let mut local = vec![usize::MAX; d.len()];
        for (k, &i) in free.iter().enumerate() {
            local[i] = k;
        }
        let nf = free.len();
        let mut rows: Vec<Vec<usize>> = (0..nf).map(|k| vec![k]).collect();
        for cell in d.cells() {
            for f in &cell.forms {
                for &(a, _) in &f.terms {
                    for &(b, _) in &f.terms {
                        if local[a] != usize::MAX && local[b] != usize::MAX {
                            rows[local[a]].push(local[b]);
                        }
                    }
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let find = |a: usize, b: usize| -> usize {
            let s = &cols[row_ptr[a]..row_ptr[a + 1]];
            row_ptr[a] + s.binary_search(&b).expect("pattern entry")
        };
        let diag = (0..nf).map(|k| find(k, k)).collect();
        let entries = d
            .cells()
            .iter()
            .map(|cell| {
                cell.forms
                    .iter()
                    .map(|f| {
                        let mut v = Vec::new();
                        for &(a, ca) in &f.terms {
                            for &(b, cb) in &f.terms {
                                if local[a] != usize::MAX && local[b] != usize::MAX {
                                    v.push((find(local[a], local[b]), ca * cb));
                                }
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        Metric {
            free,
            local,
            row_ptr,
            cols,
            diag,
            entries,
        }
    }

    fn assemble(&self, model: &EnergyModel, u: &[f64]) -> Vec<f64> {
        let d = &**model.domain();
        let j = model.integrand();
        let p = model.p();
        let states = model.cell_states(u);
        let tmax = states.iter().fold(0.0f64, |a, s| a.max(s.grad));
        let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // for p < 2 the secant coefficient t^{p-2} dominates the Hessian and
        // keeps steps from overshooting, so its floor is set far below any
        // resolvable gradient; for p > 2 it is scaled up by p - 1 instead
        let rel = if p < 2.0 { 1e-30 } else { 1e-10 };
        let eps_t = if tmax > 0.0 { rel * tmax } else { 1e-12 };
        let eps_u = if umax > 0.0 { rel * umax } else { 1e-12 };
        let lift = (p - 1.0).max(1.0);
        let mut vals = vec![0.0; self.cols.len()];
        for (c, cell) in d.cells().iter().enumerate() {
            let t = states[c].grad.max(eps_t);
            let g = lift * cell.weight * j.j_t(states[c].mean, t) / t;
            for (f, ent) in cell.forms.iter().zip(&self.entries[c]) {
                for &(idx, coef) in ent {
                    vals[idx] += g * f.kappa * coef;
                }
            }
        }
        for (k, &i) in self.free.iter().enumerate() {
            vals[self.diag[k]] += lift * d.weights()[i] * u[i].abs().max(eps_u).powf(p - 2.0);
        }
        vals
    }

    fn matvec(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        for (k, yk) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for idx in self.row_ptr[k]..self.row_ptr[k + 1] {
                s += vals[idx] * x[self.cols[idx]];
            }
            *yk = s;
        }
    }

    /// Jacobi-preconditioned conjugate gradients for `K x = b` on all nodes.
    fn solve(&self, vals: &[f64], b: &[f64]) -> Vec<f64> {
        let nf = self.free.len();
        let rhs: Vec<f64> = self.free.iter().map(|&i| b[i]).collect();
        let dinv: Vec<f64> = self.diag.iter().map(|&k| 1.0 / vals[k]).collect();
        let mut x = vec![0.0; nf];
        let mut r = rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
        let mut pdir = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let b0 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut ap = vec![0.0; nf];
        if b0 > 0.0 {
            for _ in 0..(4 * nf + 20) {
                self.matvec(vals, &pdir, &mut ap);
                let pap: f64 = pdir.iter().zip(&ap).map(|(a, b)| a * b).sum();
                if !(pap > 0.0) {
                    break;
                }
                let alpha = rz / pap;
                for k in 0..nf {
                    x[k] += alpha * pdir[k];
                    r[k] -= alpha * ap[k];
                }
                let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rn <= 1e-13 * b0 {
                    break;
                }
                for k in 0..nf {
                    z[k] = r[k] * dinv[k];
                }
                let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
                let beta = rz_new / rz;
                rz = rz_new;
                for k in 0..nf {
                    pdir[k] = z[k] + beta * pdir[k];
                }
            }
        }
        let mut out = vec![0.0; self.local.len()];
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }
}

struct PathPoint {
    u: Vec<f64>,
    f: f64,
    on_ridge: bool,
}

/// Weighted distance of `u` from its symmetrization: `(max(L^p, L^q), L^q)`.
fn vstar_distances(model: &EnergyModel, u: &[f64]) -> (f64, f64) {
    let d = &**model.domain();
    let us = symmetrized(d, u);
    let diff: Vec<f64> = u.iter().zip(&us).map(|(a, b)| a - b).collect();
    let lp = d.lm_norm(&diff, model.p());
    let lq = d.lm_norm(&diff, model.q());
    (lp.max(lq), lq)
}

fn symmetrized(d: &Domain, u: &[f64]) -> Vec<f64> {
    schwarz_values(d, u).expect("weight classes are uniform by construction")
}

/// Runs the full search: endpoint construction followed by path descent.
pub fn run(model: &EnergyModel, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let ends = init_endpoints(model, None, cfg.seed)?;
    run_with_endpoints(model, cfg, ends)
}

pub fn run_with_endpoints(model: &EnergyModel, cfg: &SolveConfig, ends: Endpoints) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dom = model.domain();
    let d = &**dom;
    let group = model.group().map(|g| &**g);
    let mut warnings = Vec::new();
    let mut mode = cfg.mode;
    let mut hypothesis_check = None;
    if mode == Mode::Direct {
        let chk = check_energy_monotonicity(model, 8, cfg.seed)?;
        if !chk.holds {
            warnings.push(format!(
                "polarization raised the energy in {} of {} trials; direct mode replaced by plain mode",
                chk.violations, chk.trials
            ));
            mode = Mode::Plain;
        }
        hypothesis_check = Some(chk);
    }
    let restricted = mode == Mode::Restricted;
    let project = |v: Vec<f64>| if restricted { fix_project(group, v) } else { v };

    // initial path on the ray through e, with the ray maximum inserted
    let m = cfg.path_points;
    let mut path: Vec<PathPoint> = (0..=m)
        .map(|i| {
            let u: Vec<f64> = ends.e.iter().map(|x| x * i as f64 / m as f64).collect();
            let f = model.energy_values(&u);
            PathPoint { u, f, on_ridge: false }
        })
        .collect();
    if let Some((s, f)) = ray_max(model, &ends.e) {
        let k = ((s * m as f64).round() as usize).clamp(1, m - 1);
        path[k] = PathPoint {
            u: ends.e.iter().map(|x| s * x).collect(),
            f,
            on_ridge: true,
        };
    }

    let metric = Metric::new(d);
    let mut record = PsRecord::default();
    let mut converged = false;
    let mut residual_norm = f64::INFINITY;
    let mut best = 0usize;
    for it in 0..cfg.max_iterations {
        let k = (1..m).fold(1, |b, i| if path[i].f > path[b].f { i } else { b });
        best = k;
        let uk = path[k].u.clone();
        let fk = path[k].f;
        if !fk.is_finite() {
            return Err(Error::Numerical {
                message: format!("non-finite energy at iteration {it}"),
                last_good: record.iterates.last().cloned().unwrap_or_default(),
            });
        }
        let r = project(model.residual_values(&uk));
        let gn = d.dual_norm(&r);
        residual_norm = gn;
        let (dv, dw) = vstar_distances(model, &uk);
        record.entries.push(PsEntry {
            iteration: it,
            point: k,
            f: fk,
            grad_norm: gn,
            w1p_norm: d.w1p_norm(&uk, model.p()),
            dist_vstar_v: dv,
            dist_vstar_w: dw,
        });
        record.iterates.push(uk.clone());
        if cfg.log {
            eprintln!("{{\"iteration\":{it},\"point\":{k},\"f\":{fk:e},\"grad_norm\":{gn:e}}}");
        }
        if gn <= cfg.tolerance {
            converged = true;
            break;
        }
        if !gn.is_finite() {
            return Err(Error::Numerical {
                message: format!("non-finite residual at iteration {it}"),
                last_good: uk,
            });
        }
        if it + 1 == cfg.max_iterations {
            break;
        }

        let kv = metric.assemble(model, &uk);
        let dir: Vec<f64> = project(metric.solve(&kv, &r)).iter().map(|x| -x).collect();
        let g2: f64 = -r.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
        if !(g2 > 0.0) {
            warnings.push(format!("iteration {it}: metric direction is not a descent direction"));
            break;
        }
        let (_, mag) = model.energy_with_magnitude(&uk);
        let slack = 64.0 * f64::EPSILON * mag;
        let ceiling = fk;
        let trial = |lambda: f64| -> Vec<f64> { uk.iter().zip(&dir).map(|(a, b)| a + lambda * b).collect() };

        // exact Armijo first; the rounding allowance only once that fails
        let mut accepted: Option<PathPoint> = None;
        for allowance in [slack] {
            if path[k].on_ridge {
                let mut lambda = cfg.initial_step;
                while accepted.is_none() && lambda >= 1e-10 {
                    let w = trial(lambda);
                    if let Some((s, fs)) = ray_max(model, &w) {
                        if fs <= ceiling - cfg.armijo * lambda * g2 + allowance && fs.is_finite() {
                            accepted = Some(PathPoint {
                                u: project(w.iter().map(|x| s * x).collect()),
                                f: fs,
                                on_ridge: true,
                            });
                        }
                    }
                    lambda *= cfg.shrink;
                }
            }
            let mut lambda = cfg.initial_step;
            while accepted.is_none() && lambda >= 1e-14 {
                let w = trial(lambda);
                let fw = model.energy_values(&w);
                if fw <= ceiling - cfg.armijo * lambda * g2 + allowance && fw.is_finite() {
                    accepted = Some(PathPoint { u: w, f: fw, on_ridge: false });
                }
                lambda *= cfg.shrink;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some(mut pt) => {
                // the ridge projection is recomputed from the projected point
                if pt.on_ridge {
                    pt.f = model.energy_values(&pt.u);
                    if pt.f > ceiling + slack {
                        pt.f = ceiling;
                    }
                }
                path[k] = pt;
            }
            None => {
                warnings.push(format!("iteration {it}: line search found no admissible step"));
                break;
            }
        }

        if mode == Mode::Direct {
            for pt in path.iter_mut().take(m).skip(1) {
                let vs = symmetrized(d, &pt.u);
                if vs != pt.u {
                    let fs = model.energy_values(&vs);
                    if fs <= pt.f {
                        pt.u = vs;
                        pt.f = fs;
                        pt.on_ridge = false;
                    }
                }
            }
        }
    }
    let level = path[best].f;
    Ok(SolveReport {
        mode,
        requested_mode: cfg.mode,
        converged,
        iterations: record.len(),
        level,
        residual_norm,
        u: path[best].u.clone(),
        record,
        endpoints: ends,
        hypothesis_check,
        warnings,
        config: cfg.clone(),
        config_hash: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub c_plain: f64,
    pub c_restricted: f64,
    pub plain_converged: bool,
    pub restricted_converged: bool,
    pub tolerance: f64,
    /// True when either run failed to converge; the levels are then partial data.
    pub declined: bool,
    pub holds: bool,
}

/// Runs the plain and restricted searches side by side and compares their levels.
pub fn compare_levels(model: &EnergyModel, cfg: &SolveConfig, tolerance: f64) -> Result<(LevelComparison, SolveReport, SolveReport)> {
    let ends = init_endpoints(model, None, cfg.seed)?;
    let plain_cfg = SolveConfig { mode: Mode::Plain, ..cfg.clone() };
    let restr_cfg = SolveConfig { mode: Mode::Restricted, ..cfg.clone() };
    let (a, b) = rayon::join(
        || run_with_endpoints(model, &plain_cfg, ends.clone()),
        || run_with_endpoints(model, &restr_cfg, ends.clone()),
    );
    let (a, b) = (a?, b?);
    let declined = !(a.converged && b.converged);
    let cmp = LevelComparison {
        c_plain: a.level,
        c_restricted: b.level,
        plain_converged: a.converged,
        restricted_converged: b.converged,
        tolerance,
        declined,
        holds: !declined && a.level <= b.level + tolerance,
    };
    Ok((cmp, a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsDiagnostics {
    pub entries: usize,
    pub sup_w1p: f64,
    pub w1p_ceiling: f64,
    pub bounded: bool,
    /// `max ‖u_h − u_k‖_{L^q}` over the last quartile of the record.
    pub tail_cauchy_w: f64,
    pub cauchy_tolerance: f64,
    /// Largest rise of `‖u_h − u_h*‖_V` after the first entry.
    pub max_dist_v_increase: f64,
    pub dist_v_monotone: bool,
    pub final_dist_v: f64,
    pub flags: Vec<String>,
}

pub fn ps_diagnostics(
    rec: &PsRecord,
    model: &EnergyModel,
    w1p_ceiling: f64,
    cauchy_tolerance: f64,
) -> Result<PsDiagnostics> {
    if rec.len() < 2 {
        return Err(Error::Usage(format!("diagnostics need at least 2 record entries, got {}", rec.len())));
    }
    let d = &**model.domain();
    let n = rec.len();
    let sup_w1p = rec.entries.iter().fold(0.0f64, |a, e| a.max(e.w1p_norm));
    let tail = (3 * n) / 4;
    let mut cauchy: f64 = 0.0;
    if rec.iterates.len() == n {
        for a in tail..n {
            for b in a + 1..n {
                let diff: Vec<f64> = rec.iterates[a].iter().zip(&rec.iterates[b]).map(|(x, y)| x - y).collect();
                cauchy = cauchy.max(d.lm_norm(&diff, model.q()));
            }
        }
    } else {
        cauchy = f64::NAN;
    }
    let mut max_inc: f64 = 0.0;
    for w in rec.entries[1..].windows(2) {
        max_inc = max_inc.max(w[1].dist_vstar_v - w[0].dist_vstar_v);
    }
    let bounded = sup_w1p <= w1p_ceiling;
    let mut flags = Vec::new();
    if !bounded {
        flags.push(format!("unbounded: sup ‖u_h‖_(1,p) = {sup_w1p:e} exceeds {w1p_ceiling:e}"));
    }
    if !(cauchy <= cauchy_tolerance) {
        flags.push(format!("tail not Cauchy in L^q: {cauchy:e} > {cauchy_tolerance:e}"));
    }
    let dist_v_monotone = max_inc <= 0.0;
    Ok(PsDiagnostics {
        entries: n,
        sup_w1p,
        w1p_ceiling,
        bounded,
        tail_cauchy_w: cauchy,
        cauchy_tolerance,
        max_dist_v_increase: max_inc,
        dist_v_monotone,
        final_dist_v: rec.entries[n - 1].dist_vstar_v,
        flags,
    })
}
