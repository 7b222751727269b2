//! Two-point rearrangements and the discrete Schwarz symmetrization.
//!
//! `u*` puts the values of `|u|` in decreasing order along the target order
//! of nodes (by distance from the centre, ties by node index), separately in
//! each class of nodes sharing the same quadrature weight. Within a class the
//! rearrangement is a permutation of values, so every `Lᵐ` norm of `|u|` is
//! preserved exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::EnergyModel;
use crate::grid::{Domain, GridFunction, Lattice};

/// Polarization across an involutive node permutation.
///
/// `pairs` lists `(positive, negative)`; after polarization the positive
/// node carries the larger of the two values.
#[derive(Clone, Debug)]
pub struct Polarizer {
    domain: Arc<Domain>,
    pairs: Vec<(usize, usize)>,
    label: String,
    reflection_compatible: bool,
}

/// Position of a node in the target order.
fn order_key(d: &Domain, i: usize) -> (u64, usize) {
    (d.radial_key()[i], i)
}

impl Polarizer {
    /// Builds a polarizer from disjoint node pairs. Each pair must join two
    /// nodes with equal quadrature weight and the same boundary status; the
    /// positive side is the node earlier in the target order.
    pub fn from_pairs(domain: &Arc<Domain>, pairs: &[(usize, usize)], label: impl Into<String>) -> Result<Self> {
        let n = domain.len();
        let mut used = vec![false; n];
        let mut out = Vec::with_capacity(pairs.len());
        let mut sigma: Vec<usize> = (0..n).collect();
        for &(a, b) in pairs {
            if a >= n || b >= n || a == b {
                return Err(Error::Usage(format!("invalid polarizer pair ({a}, {b})")));
            }
            if used[a] || used[b] {
                return Err(Error::Usage(format!("node pair ({a}, {b}) overlaps another pair")));
            }
            used[a] = true;
            used[b] = true;
            sigma[a] = b;
            sigma[b] = a;
            if domain.weights()[a] != domain.weights()[b] {
                return Err(Error::UnsupportedDomain(format!(
                    "polarizer pair ({a}, {b}) joins nodes of weight {} and {}",
                    domain.weights()[a],
                    domain.weights()[b]
                )));
            }
            if domain.boundary()[a] != domain.boundary()[b] {
                return Err(Error::UnsupportedDomain(format!("polarizer pair ({a}, {b}) crosses the boundary")));
            }
            if domain.boundary()[a] {
                continue;
            }
            let (p, m) = if order_key(domain, a) < order_key(domain, b) { (a, b) } else { (b, a) };
            out.push((p, m));
        }
        let reflection_compatible = is_reflection_compatible(domain, &sigma, &out);
        Ok(Polarizer {
            domain: Arc::clone(domain),
            pairs: out,
            label: label.into(),
            reflection_compatible,
        })
    }

    /// Polarizer of an involution `sigma` (`sigma[sigma[i]] = i`).
    pub fn from_involution(domain: &Arc<Domain>, sigma: &[usize], label: impl Into<String>) -> Result<Self> {
        if sigma.len() != domain.len() {
            return Err(Error::Usage("involution length does not match the domain".into()));
        }
        let mut pairs = Vec::new();
        for (i, &s) in sigma.iter().enumerate() {
            if s >= sigma.len() || sigma[s] != i {
                return Err(Error::Usage(format!("permutation is not an involution at node {i}")));
            }
            if i < s {
                pairs.push((i, s));
            }
        }
        Polarizer::from_pairs(domain, &pairs, label)
    }

    /// Two-point transposition of nodes `a` and `b`.
    pub fn transposition(domain: &Arc<Domain>, a: usize, b: usize) -> Result<Self> {
        Polarizer::from_pairs(domain, &[(a, b)], format!("swap({a},{b})"))
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    /// True when the underlying permutation is a graph automorphism and no
    /// edge joins the two sides except edges between mirror images.
    pub fn reflection_compatible(&self) -> bool {
        self.reflection_compatible
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        u.check_domain(&self.domain)?;
        let mut v = u.values().to_vec();
        self.apply_in_place(&mut v);
        Ok(GridFunction::from_raw(&self.domain, v))
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        for &(p, m) in &self.pairs {
            let (a, b) = (v[p], v[m]);
            if b > a {
                v[p] = b;
                v[m] = a;
            }
        }
    }
}

fn is_reflection_compatible(d: &Domain, sigma: &[usize], pairs: &[(usize, usize)]) -> bool {
    let adj = d.adjacency();
    let mut side = vec![0i8; d.len()];
    for &(p, m) in pairs {
        side[p] = 1;
        side[m] = -1;
    }
    d.edges().into_iter().all(|(a, b)| {
        adj[sigma[a]].binary_search(&sigma[b]).is_ok() && !(side[a] * side[b] == -1 && sigma[a] != b)
    })
}

pub fn polarize(u: &GridFunction, h: &Polarizer) -> Result<GridFunction> {
    h.apply(u)
}

/// The exact reflections of the grid that fix the centre: axis and diagonal
/// mirrors on the square, every angular mirror on polar grids.
pub fn reflection_polarizers(domain: &Arc<Domain>) -> Result<Vec<Polarizer>> {
    let mut out = Vec::new();
    match *domain.lattice() {
        Lattice::Radial { .. } => {}
        Lattice::Square { side_nodes } => {
            let s = side_nodes as i64;
            let maps: [(&str, fn(i64, i64) -> (i64, i64)); 4] = [
                ("mirror-x", |a, b| (-a, b)),
                ("mirror-y", |a, b| (a, -b)),
                ("mirror-diagonal", |a, b| (b, a)),
                ("mirror-antidiagonal", |a, b| (-b, -a)),
            ];
            for (label, f) in maps {
                let sigma: Vec<usize> = (0..side_nodes * side_nodes)
                    .map(|id| {
                        let (i, j) = ((id % side_nodes) as i64, (id / side_nodes) as i64);
                        let (a, b) = f(2 * i - (s - 1), 2 * j - (s - 1));
                        (((b + s - 1) / 2) * s + (a + s - 1) / 2) as usize
                    })
                    .collect();
                out.push(Polarizer::from_involution(domain, &sigma, label)?);
            }
        }
        Lattice::Polar { rings, angular: m } => {
            for axis in 0..m {
                let sigma: Vec<usize> = (0..rings * m)
                    .map(|id| (id / m) * m + (axis + m - id % m) % m)
                    .collect();
                out.push(Polarizer::from_involution(domain, &sigma, format!("mirror-{axis}"))?);
            }
        }
    }
    Ok(out)
}

/// Decreasing rearrangement of `|values|` along `keys` within each class.
///
/// `classes[i]` labels the class of node `i` (`None` leaves the node
/// untouched); every class must have a single weight.
pub fn rearrange(values: &[f64], keys: &[(u64, usize)], classes: &[Option<u64>], weights: &[f64]) -> Result<Vec<f64>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        if let Some(c) = c {
            groups.entry(*c).or_default().push(i);
        }
    }
    let mut out = values.to_vec();
    for nodes in groups.values_mut() {
        let w0 = weights[nodes[0]];
        if let Some(&bad) = nodes.iter().find(|&&i| weights[i] != w0) {
            return Err(Error::UnsupportedDomain(format!(
                "class containing nodes ({}, {bad}) has unequal weights",
                nodes[0]
            )));
        }
        nodes.sort_by_key(|&i| keys[i]);
        let mut vals: Vec<f64> = nodes.iter().map(|&i| values[i].abs()).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        for (&i, v) in nodes.iter().zip(vals) {
            out[i] = v;
        }
    }
    Ok(out)
}

fn weight_classes(d: &Domain) -> Vec<Option<u64>> {
    (0..d.len())
        .map(|i| if d.boundary()[i] { None } else { Some(d.weights()[i].to_bits()) })
        .collect()
}

/// Discrete Schwarz symmetrization `u* = (|u|)*`.
pub fn schwarz(u: &GridFunction) -> Result<GridFunction> {
    let d = u.domain();
    Ok(GridFunction::from_raw(d, schwarz_values(d, u.values())?))
}

pub fn schwarz_values(d: &Domain, u: &[f64]) -> Result<Vec<f64>> {
    let keys: Vec<(u64, usize)> = (0..d.len()).map(|i| order_key(d, i)).collect();
    rearrange(u, &keys, &weight_classes(d), d.weights())
}

/// A fixed sequence of transposition polarizers whose composition, applied
/// to `|u|`, yields `u*` for every `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationPlan {
    /// `(positive, negative)` node pairs, applied in order.
    pub swaps: Vec<(usize, usize)>,
    /// Free nodes in target order.
    pub order: Vec<usize>,
}

/// Odd-even transposition sort along the target order of each weight class.
pub fn plan(domain: &Arc<Domain>) -> Result<SymmetrizationPlan> {
    let d = &**domain;
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in d.free_nodes() {
        groups.entry(d.weights()[*i].to_bits()).or_default().push(*i);
    }
    let mut swaps = Vec::new();
    for nodes in groups.values_mut() {
        nodes.sort_by_key(|&i| order_key(d, i));
        let n = nodes.len();
        for round in 0..n {
            let mut k = round % 2;
            while k + 1 < n {
                swaps.push((nodes[k], nodes[k + 1]));
                k += 2;
            }
        }
    }
    let mut order: Vec<usize> = d.free_nodes().to_vec();
    order.sort_by_key(|&i| order_key(d, i));
    Ok(SymmetrizationPlan { swaps, order })
}

impl SymmetrizationPlan {
    pub fn len(&self) -> usize {
        self.swaps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.swaps.is_empty()
    }

    pub fn polarizer(&self, domain: &Arc<Domain>, k: usize) -> Result<Polarizer> {
        let (a, b) = self.swaps[k];
        Polarizer::transposition(domain, a, b)
    }

    #[inline]
    fn step(&self, k: usize, v: &mut [f64]) {
        let (p, m) = self.swaps[k];
        if v[m] > v[p] {
            v.swap(p, m);
        }
    }

    /// Applies `Θ(u) = |u|` followed by every swap.
    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        let mut v: Vec<f64> = u.values().iter().map(|x| x.abs()).collect();
        for k in 0..self.swaps.len() {
            self.step(k, &mut v);
        }
        GridFunction::from_raw(u.domain(), v)
    }

    /// Weighted `L²` distance to `target` after each prefix of the plan.
    pub fn distance_trace(&self, u: &GridFunction, target: &GridFunction) -> Vec<f64> {
        let d = u.domain();
        let mut v: Vec<f64> = u.values().iter().map(|x| x.abs()).collect();
        let dist = |v: &[f64]| {
            let diff: Vec<f64> = v.iter().zip(target.values()).map(|(a, b)| a - b).collect();
            d.lm_norm(&diff, 2.0)
        };
        let mut out = vec![dist(&v)];
        for k in 0..self.swaps.len() {
            self.step(k, &mut v);
            out.push(dist(&v));
        }
        out
    }

    /// Writes `step,positive,negative`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,positive,negative")?;
        for (k, (a, b)) in self.swaps.iter().enumerate() {
            writeln!(w, "{k},{a},{b}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub domain: String,
    pub samples: usize,
    pub polarizers: usize,
    pub plan_length: usize,
    /// `max |(u*)^H − u*|` and `max |(u^H)* − u*|`.
    pub commutation_deviation: f64,
    /// `max |u^{HH} − u^H|`.
    pub idempotence_deviation: f64,
    /// Largest `‖u^H − v^H‖_p − ‖u − v‖_p` over `p ∈ {1, 2, 4}`.
    pub contraction_excess: f64,
    /// Samples where the plan output differs from `u*` in any bit.
    pub plan_mismatches: usize,
    /// Largest observed `‖|u| − |v|‖_p / ‖u − v‖_p`.
    pub c_theta: f64,
    pub energy_trials: usize,
    /// Trials where `Σ_edges |Δu|²` rose under a reflection-compatible polarizer.
    pub energy_violations: usize,
    pub pass: bool,
}

/// Sampled check of the symmetrization axioms on `domain`.
pub fn check_axioms(domain: &Arc<Domain>, samples: usize, seed: u64) -> Result<AxiomReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &**domain;
    let refl = reflection_polarizers(domain)?;
    let pl = plan(domain)?;
    let mut pols: Vec<Polarizer> = refl.clone();
    for k in (0..pl.len()).step_by((pl.len() / 32).max(1)) {
        pols.push(pl.polarizer(domain, k)?);
    }
    let random = |rng: &mut ChaCha8Rng| -> GridFunction {
        GridFunction::from_values_masked(domain, (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let maxdev = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let mut rep = AxiomReport {
        domain: d.kind().to_string(),
        samples,
        polarizers: pols.len(),
        plan_length: pl.len(),
        commutation_deviation: 0.0,
        idempotence_deviation: 0.0,
        contraction_excess: f64::NEG_INFINITY,
        plan_mismatches: 0,
        c_theta: 0.0,
        energy_trials: 0,
        energy_violations: 0,
        pass: false,
    };
    for _ in 0..samples {
        let u = random(&mut rng);
        let v = random(&mut rng);
        let us = schwarz(&u)?;
        if let Some(h) = pols.choose(&mut rng) {
            let uh = h.apply(&u)?;
            let ush = h.apply(&us)?;
            let uhs = schwarz(&uh)?;
            rep.commutation_deviation = rep
                .commutation_deviation
                .max(maxdev(ush.values(), us.values()))
                .max(maxdev(uhs.values(), us.values()));
            rep.idempotence_deviation = rep.idempotence_deviation.max(maxdev(h.apply(&uh)?.values(), uh.values()));
            let vh = h.apply(&v)?;
            for p in [1.0, 2.0, 4.0] {
                let before = d.lm_norm(&diff(u.values(), v.values()), p);
                let after = d.lm_norm(&diff(uh.values(), vh.values()), p);
                rep.contraction_excess = rep.contraction_excess.max(after - before);
            }
        }
        if pl.apply(&u).values() != us.values() {
            rep.plan_mismatches += 1;
        }
        for p in [1.0, 2.0, 4.0] {
            let num = d.lm_norm(&diff(u.abs().values(), v.abs().values()), p);
            let den = d.lm_norm(&diff(u.values(), v.values()), p);
            if den > 0.0 {
                rep.c_theta = rep.c_theta.max(num / den);
            }
        }
        for h in refl.iter().filter(|h| h.reflection_compatible()) {
            rep.energy_trials += 1;
            let uh = h.apply(&u)?;
            let (e0, e1) = (edge_energy(d, u.values(), 2.0), edge_energy(d, uh.values(), 2.0));
            if e1 > e0 + 1e-12 * (1.0 + e0) {
                rep.energy_violations += 1;
            }
        }
    }
    if rep.contraction_excess == f64::NEG_INFINITY {
        rep.contraction_excess = 0.0;
    }
    rep.pass = rep.commutation_deviation == 0.0
        && rep.idempotence_deviation == 0.0
        && rep.contraction_excess <= 1e-12
        && rep.plan_mismatches == 0
        && rep.c_theta <= 1.0 + 1e-12
        && rep.energy_violations == 0;
    Ok(rep)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Graph Dirichlet energy `Σ_edges |u_a − u_b|ᵖ`.
pub fn edge_energy(d: &Domain, u: &[f64], p: f64) -> f64 {
    d.edges().iter().map(|&(a, b)| (u[a] - u[b]).abs().powf(p)).sum()
}

/// Outcome of testing `f(u^H) ≤ f(u)` on sampled `u ≥ 0` for the polarizers
/// the direct solver mode would use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub trials: usize,
    pub violations: usize,
    pub max_increase: f64,
    pub holds: bool,
}

pub fn check_energy_monotonicity(model: &EnergyModel, samples: usize, seed: u64) -> Result<MonotonicityCheck> {
    let domain = model.domain();
    let d = &**domain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pl = plan(domain)?;
    let mut pols = reflection_polarizers(domain)?;
    for k in (0..pl.len()).step_by((pl.len() / 64).max(1)) {
        pols.push(pl.polarizer(domain, k)?);
    }
    let mut rep = MonotonicityCheck {
        trials: 0,
        violations: 0,
        max_increase: 0.0,
        holds: true,
    };
    for _ in 0..samples {
        let amp = rng.gen_range(0.1..2.0);
        let u: Vec<f64> = (0..d.len())
            .map(|i| if d.boundary()[i] { 0.0 } else { amp * rng.gen_range(0.0..1.0) })
            .collect();
        let e0 = model.energy_values(&u);
        for h in &pols {
            let mut uh = u.clone();
            h.apply_in_place(&mut uh);
            let e1 = model.energy_values(&uh);
            rep.trials += 1;
            let inc = e1 - e0;
            if inc > 1e-12 * (1.0 + e0.abs()) {
                rep.violations += 1;
                rep.max_increase = rep.max_increase.max(inc);
            }
        }
    }
    rep.holds = rep.violations == 0;
    Ok(rep)
}
