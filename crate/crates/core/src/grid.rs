//! Discrete function spaces on bounded invariant domains.
//!
//! A [`Domain`] is a node set with positive quadrature weights, a homogeneous
//! Dirichlet boundary mask and a cell decomposition. Each cell carries its own
//! volume, the linear form producing the cell average of nodal values, and a
//! list of weighted first differences whose quadratic sum is `|Du|²` on the
//! cell. Energy, derivative and residual assembly all read the same cell data,
//! which keeps them exactly dual to one another.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First line of every serialized grid function.
pub const GRIDFUNCTION_HEADER: &str = "# symcrit-gridfunction v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Square,
    DiskPolar,
    AnnulusPolar,
    RadialBall1d,
}

impl DomainKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainKind::Square => "square",
            DomainKind::DiskPolar => "disk-polar",
            DomainKind::AnnulusPolar => "annulus-polar",
            DomainKind::RadialBall1d => "radial-ball-1d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(DomainKind::Square),
            "disk-polar" => Ok(DomainKind::DiskPolar),
            "annulus-polar" => Ok(DomainKind::AnnulusPolar),
            "radial-ball-1d" => Ok(DomainKind::RadialBall1d),
            other => Err(Error::config("domain.kind", format!("unknown domain kind `{other}`"))),
        }
    }

    pub fn is_polar(self) -> bool {
        matches!(self, DomainKind::DiskPolar | DomainKind::AnnulusPolar)
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters from which a [`Domain`] is built.
///
/// `resolution` counts free (non-boundary) nodes along the radial or axial
/// direction. `extent` is the side length of the square or the outer radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dimension: usize,
    pub resolution: usize,
    pub angular: usize,
    pub extent: f64,
    pub inner_radius: f64,
    pub max_rotation_order: usize,
}

impl DomainSpec {
    pub fn square(side: f64, resolution: usize) -> Self {
        DomainSpec {
            kind: DomainKind::Square,
            dimension: 2,
            resolution,
            angular: 0,
            extent: side,
            inner_radius: 0.0,
            max_rotation_order: 8,
        }
    }

    pub fn disk(radius: f64, resolution: usize, angular: usize) -> Self {
        DomainSpec {
            kind: DomainKind::DiskPolar,
            dimension: 2,
            resolution,
            angular,
            extent: radius,
            inner_radius: 0.0,
            max_rotation_order: 8,
        }
    }

    pub fn annulus(inner: f64, outer: f64, resolution: usize, angular: usize) -> Self {
        DomainSpec {
            kind: DomainKind::AnnulusPolar,
            dimension: 2,
            resolution,
            angular,
            extent: outer,
            inner_radius: inner,
            max_rotation_order: 8,
        }
    }

    pub fn radial_ball(dimension: usize, radius: f64, resolution: usize) -> Self {
        DomainSpec {
            kind: DomainKind::RadialBall1d,
            dimension,
            resolution,
            angular: 0,
            extent: radius,
            inner_radius: 0.0,
            max_rotation_order: 1,
        }
    }

    pub fn with_max_rotation_order(mut self, order: usize) -> Self {
        self.max_rotation_order = order;
        self
    }

    fn validate(&self) -> Result<()> {
        let min_res = if self.kind == DomainKind::RadialBall1d { 2 } else { 3 };
        if self.resolution < min_res {
            return Err(Error::config(
                "domain.resolution",
                format!("need at least {min_res} nodes per axis, got {}", self.resolution),
            ));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::config("domain.extent", format!("must be positive, got {}", self.extent)));
        }
        if self.dimension < 2 {
            return Err(Error::config("domain.dimension", format!("need N >= 2, got {}", self.dimension)));
        }
        match self.kind {
            DomainKind::Square | DomainKind::DiskPolar | DomainKind::AnnulusPolar if self.dimension != 2 => {
                return Err(Error::config(
                    "domain.dimension",
                    format!("{} grids are two-dimensional, got N = {}", self.kind, self.dimension),
                ));
            }
            _ => {}
        }
        if self.kind.is_polar() {
            if self.angular < 3 {
                return Err(Error::config("domain.angular", format!("need at least 3 angular nodes, got {}", self.angular)));
            }
            if self.max_rotation_order == 0 || self.angular % self.max_rotation_order != 0 {
                return Err(Error::config(
                    "domain.angular",
                    format!(
                        "angular resolution {} is not divisible by the supported rotation order {}",
                        self.angular, self.max_rotation_order
                    ),
                ));
            }
        }
        if self.kind == DomainKind::AnnulusPolar
            && !(self.inner_radius > 0.0 && self.inner_radius < self.extent)
        {
            return Err(Error::config(
                "domain.inner_radius",
                format!("need 0 < inner radius < outer radius, got {}", self.inner_radius),
            ));
        }
        Ok(())
    }
}

/// A weighted linear combination of nodal values.
#[derive(Clone, Debug, PartialEq)]
pub struct Form {
    pub kappa: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Form {
    #[inline]
    pub fn apply(&self, u: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * u[i]).sum()
    }

    /// Two-node difference `u[b] - u[a]`, if that is what this form is.
    pub fn as_edge(&self) -> Option<(usize, usize)> {
        match self.terms.as_slice() {
            [(a, ca), (b, cb)] if *ca == -1.0 && *cb == 1.0 => Some((*a, *b)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub weight: f64,
    pub mean: Vec<(usize, f64)>,
    pub forms: Vec<Form>,
}

impl Cell {
    #[inline]
    pub fn mean_value(&self, u: &[f64]) -> f64 {
        self.mean.iter().map(|&(i, c)| c * u[i]).sum()
    }

    #[inline]
    pub fn grad_sq(&self, u: &[f64]) -> f64 {
        self.forms
            .iter()
            .map(|f| {
                let d = f.apply(u);
                f.kappa * d * d
            })
            .sum()
    }

    #[inline]
    pub fn grad_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.forms.iter().map(|f| f.kappa * f.apply(u) * f.apply(v)).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.mean.iter().map(|&(i, _)| i)
    }
}

/// Integer index structure used to build exact group actions.
#[derive(Clone, Debug, PartialEq)]
pub enum Lattice {
    /// `side_nodes²` nodes, id = j * side_nodes + i.
    Square { side_nodes: usize },
    /// `rings * angular` nodes, id = ring * angular + k; ring 0 is the innermost stored ring.
    Polar { rings: usize, angular: usize },
    Radial { nodes: usize },
}

#[derive(Debug)]
pub struct Domain {
    spec: DomainSpec,
    lattice: Lattice,
    coords: Vec<[f64; 2]>,
    weights: Vec<f64>,
    boundary: Vec<bool>,
    free: Vec<usize>,
    radial_key: Vec<u64>,
    cells: Vec<Cell>,
    node_cells: Vec<Vec<usize>>,
    adjacency: Vec<Vec<usize>>,
    volume: f64,
}

/// Builds a validated domain. Node ordering is deterministic in `spec`.
pub fn build_domain(spec: &DomainSpec) -> Result<Arc<Domain>> {
    spec.validate()?;
    let raw = match spec.kind {
        DomainKind::Square => square_layout(spec),
        DomainKind::DiskPolar | DomainKind::AnnulusPolar => polar_layout(spec),
        DomainKind::RadialBall1d => radial_layout(spec),
    };
    Ok(Arc::new(raw.finish(spec.clone())))
}

struct RawLayout {
    lattice: Lattice,
    coords: Vec<[f64; 2]>,
    boundary: Vec<bool>,
    radial_key: Vec<u64>,
    cells: Vec<Cell>,
    volume: f64,
}

impl RawLayout {
    fn finish(self, spec: DomainSpec) -> Domain {
        let n = self.coords.len();
        let mut weights = vec![0.0; n];
        let mut node_cells = vec![Vec::new(); n];
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (c, cell) in self.cells.iter().enumerate() {
            // volume is shared equally among the cell's own nodes
            let owners: Vec<usize> = cell_owner_nodes(&self.lattice, cell);
            let share = cell.weight / owners.len() as f64;
            for &i in &owners {
                weights[i] += share;
            }
            for i in cell.nodes() {
                if node_cells[i].last() != Some(&c) {
                    node_cells[i].push(c);
                }
            }
            for f in &cell.forms {
                if let Some((a, b)) = f.as_edge() {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let free = (0..n).filter(|&i| !self.boundary[i]).collect();
        Domain {
            spec,
            lattice: self.lattice,
            coords: self.coords,
            weights,
            boundary: self.boundary,
            free,
            radial_key: self.radial_key,
            cells: self.cells,
            node_cells,
            adjacency,
            volume: self.volume,
        }
    }
}

/// Nodes that receive a share of the cell volume: the corners actually
/// stored in the grid (the reconstructed disk centre is not a node).
fn cell_owner_nodes(lattice: &Lattice, cell: &Cell) -> Vec<usize> {
    match lattice {
        Lattice::Polar { .. } => {
            let mut v: Vec<usize> = cell
                .forms
                .iter()
                .filter_map(|f| f.as_edge())
                .flat_map(|(a, b)| [a, b])
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        _ => cell.nodes().collect(),
    }
}

fn edge(a: usize, b: usize, kappa: f64) -> Form {
    Form {
        kappa,
        terms: vec![(a, -1.0), (b, 1.0)],
    }
}

fn square_layout(spec: &DomainSpec) -> RawLayout {
    let n = spec.resolution;
    let s = n + 2;
    let side = spec.extent;
    let h = side / (n + 1) as f64;
    let id = |i: usize, j: usize| j * s + i;
    let mut coords = Vec::with_capacity(s * s);
    let mut boundary = Vec::with_capacity(s * s);
    let mut radial_key = Vec::with_capacity(s * s);
    for j in 0..s {
        for i in 0..s {
            coords.push([-0.5 * side + i as f64 * h, -0.5 * side + j as f64 * h]);
            boundary.push(i == 0 || j == 0 || i == s - 1 || j == s - 1);
            let a = 2 * i as i64 - (s as i64 - 1);
            let b = 2 * j as i64 - (s as i64 - 1);
            radial_key.push((a * a + b * b) as u64);
        }
    }
    let kappa = 1.0 / (2.0 * h * h);
    let mut cells = Vec::with_capacity((s - 1) * (s - 1));
    for j in 0..s - 1 {
        for i in 0..s - 1 {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            cells.push(Cell {
                weight: h * h,
                mean: vec![(n00, 0.25), (n10, 0.25), (n01, 0.25), (n11, 0.25)],
                forms: vec![
                    edge(n00, n10, kappa),
                    edge(n01, n11, kappa),
                    edge(n00, n01, kappa),
                    edge(n10, n11, kappa),
                ],
            });
        }
    }
    RawLayout {
        lattice: Lattice::Square { side_nodes: s },
        coords,
        boundary,
        radial_key,
        cells,
        volume: side * side,
    }
}

fn polar_layout(spec: &DomainSpec) -> RawLayout {
    let m = spec.angular;
    let dtheta = 2.0 * PI / m as f64;
    let outer = spec.extent;
    // stored ring radii, innermost first
    let (radii, inner_boundary): (Vec<f64>, bool) = match spec.kind {
        DomainKind::DiskPolar => {
            let dr = outer / (spec.resolution + 1) as f64;
            ((1..=spec.resolution + 1).map(|i| i as f64 * dr).collect(), false)
        }
        _ => {
            let inner = spec.inner_radius;
            let dr = (outer - inner) / (spec.resolution + 1) as f64;
            ((0..=spec.resolution + 1).map(|i| inner + i as f64 * dr).collect(), true)
        }
    };
    let rings = radii.len();
    let id = |ring: usize, k: usize| ring * m + k;
    let mut coords = Vec::with_capacity(rings * m);
    let mut boundary = Vec::with_capacity(rings * m);
    let mut radial_key = Vec::with_capacity(rings * m);
    for (ring, &r) in radii.iter().enumerate() {
        for k in 0..m {
            let th = k as f64 * dtheta;
            coords.push([r * th.cos(), r * th.sin()]);
            boundary.push(ring == rings - 1 || (inner_boundary && ring == 0));
            radial_key.push(ring as u64);
        }
    }
    let mut cells = Vec::new();
    if spec.kind == DomainKind::DiskPolar {
        // wedges around the excluded centre; the centre value is the ring-0 mean
        let r1 = radii[0];
        let centre: Vec<(usize, f64)> = (0..m).map(|k| (id(0, k), 1.0 / m as f64)).collect();
        let from_centre = |k: usize| -> Vec<(usize, f64)> {
            let mut t: Vec<(usize, f64)> = centre.iter().map(|&(i, c)| (i, -c)).collect();
            t[k].1 += 1.0;
            t
        };
        for k in 0..m {
            let k1 = (k + 1) % m;
            let mut mean: Vec<(usize, f64)> = centre.iter().map(|&(i, c)| (i, c / 3.0)).collect();
            mean[k].1 += 1.0 / 3.0;
            mean[k1].1 += 1.0 / 3.0;
            cells.push(Cell {
                weight: 0.5 * r1 * r1 * dtheta,
                mean,
                forms: vec![
                    Form { kappa: 1.0 / (2.0 * r1 * r1), terms: from_centre(k) },
                    Form { kappa: 1.0 / (2.0 * r1 * r1), terms: from_centre(k1) },
                    edge(id(0, k), id(0, k1), 1.0 / (r1 * dtheta).powi(2)),
                ],
            });
        }
    }
    for ring in 0..rings - 1 {
        let (ra, rb) = (radii[ring], radii[ring + 1]);
        let dr = rb - ra;
        let kr = 1.0 / (2.0 * dr * dr);
        let ka = 1.0 / (2.0 * (ra * dtheta).powi(2));
        let kb = 1.0 / (2.0 * (rb * dtheta).powi(2));
        for k in 0..m {
            let k1 = (k + 1) % m;
            let (a0, a1, b0, b1) = (id(ring, k), id(ring, k1), id(ring + 1, k), id(ring + 1, k1));
            cells.push(Cell {
                weight: 0.5 * (rb * rb - ra * ra) * dtheta,
                mean: vec![(a0, 0.25), (a1, 0.25), (b0, 0.25), (b1, 0.25)],
                forms: vec![edge(a0, b0, kr), edge(a1, b1, kr), edge(a0, a1, ka), edge(b0, b1, kb)],
            });
        }
    }
    let volume = PI * (outer * outer - spec.inner_radius * spec.inner_radius);
    RawLayout {
        lattice: Lattice::Polar { rings, angular: m },
        coords,
        boundary,
        radial_key,
        cells,
        volume,
    }
}

fn radial_layout(spec: &DomainSpec) -> RawLayout {
    let n = spec.resolution;
    let dim = spec.dimension as i32;
    let dr = spec.extent / n as f64;
    let omega = unit_sphere_area(spec.dimension);
    let shell = |r: f64| omega * r.powi(dim) / dim as f64;
    let coords: Vec<[f64; 2]> = (0..=n).map(|i| [i as f64 * dr, 0.0]).collect();
    let boundary = (0..=n).map(|i| i == n).collect();
    let radial_key = (0..=n as u64).collect();
    let cells = (0..n)
        .map(|i| Cell {
            weight: shell((i + 1) as f64 * dr) - shell(i as f64 * dr),
            mean: vec![(i, 0.5), (i + 1, 0.5)],
            forms: vec![edge(i, i + 1, 1.0 / (dr * dr))],
        })
        .collect();
    RawLayout {
        lattice: Lattice::Radial { nodes: n + 1 },
        coords,
        boundary,
        radial_key,
        cells,
        volume: shell(spec.extent),
    }
}

/// Surface area of the unit sphere in ℝ^N, 2π^{N/2}/Γ(N/2).
pub fn unit_sphere_area(dim: usize) -> f64 {
    // Γ(N/2) for integer N by recursion from Γ(1) = 1, Γ(1/2) = √π
    let mut gamma = if dim % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if dim % 2 == 0 { 1.0 } else { 0.5 };
    while x < dim as f64 / 2.0 - 1e-12 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(dim as f64 / 2.0) / gamma
}

impl Domain {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }
    pub fn kind(&self) -> DomainKind {
        self.spec.kind
    }
    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn len(&self) -> usize {
        self.coords.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }
    /// Non-boundary node indices in increasing order.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }
    /// Exact integer key ordering nodes by distance from the centre.
    pub fn radial_key(&self) -> &[u64] {
        &self.radial_key
    }
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }
    /// Cells touching each node, ascending.
    pub fn node_cells(&self) -> &[Vec<usize>] {
        &self.node_cells
    }
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }
    /// Exact volume of the continuous domain the grid discretizes.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Euclidean distance of each node from the centre.
    pub fn radius(&self, i: usize) -> f64 {
        let [x, y] = self.coords[i];
        x.hypot(y)
    }

    /// Undirected edges `(a, b)` with `a < b`, each listed once.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn grad_magnitudes(&self, u: &[f64]) -> Vec<f64> {
        self.cells.iter().map(|c| c.grad_sq(u).sqrt()).collect()
    }

    /// Discrete `‖u‖_m = (Σ_i w_i |u_i|^m)^{1/m}`.
    pub fn lm_norm(&self, u: &[f64], m: f64) -> f64 {
        let s: f64 = u
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * x.abs().powf(m))
            .sum();
        s.powf(1.0 / m)
    }

    /// `‖Du‖_p^p = Σ_c w_c |Du|_c^p`.
    pub fn grad_p_pow(&self, u: &[f64], p: f64) -> f64 {
        self.cells
            .iter()
            .map(|c| c.weight * c.grad_sq(u).powf(0.5 * p))
            .sum()
    }

    /// `‖u‖_{1,p} = (‖u‖_p^p + ‖Du‖_p^p)^{1/p}`.
    pub fn w1p_norm(&self, u: &[f64], p: f64) -> f64 {
        let lp = self.lm_norm(u, p).powf(p);
        (lp + self.grad_p_pow(u, p)).powf(1.0 / p)
    }

    /// Weighted inner product `Σ_i w_i u_i v_i`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.weights).map(|((a, b), w)| w * a * b).sum()
    }

    /// Dual norm of a nodal covector: `(Σ_free r_i² / w_i)^{1/2}`.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        self.free
            .iter()
            .map(|&i| r[i] * r[i] / self.weights[i])
            .sum::<f64>()
            .sqrt()
    }
}

/// Nodal values on a shared [`Domain`]; boundary entries are zero.
#[derive(Clone, Debug)]
pub struct GridFunction {
    domain: Arc<Domain>,
    values: Vec<f64>,
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) && self.values == other.values
    }
}

impl GridFunction {
    pub fn zeros(domain: &Arc<Domain>) -> Self {
        GridFunction {
            domain: Arc::clone(domain),
            values: vec![0.0; domain.len()],
        }
    }

    /// Checked constructor: length, finiteness and zero boundary.
    pub fn from_values(domain: &Arc<Domain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::Usage(format!(
                "expected {} nodal values, got {}",
                domain.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("non-finite value at node {i}")));
        }
        if let Some(i) = (0..values.len()).find(|&i| domain.boundary[i] && values[i] != 0.0) {
            return Err(Error::Usage(format!("boundary node {i} carries nonzero value {}", values[i])));
        }
        Ok(GridFunction {
            domain: Arc::clone(domain),
            values,
        })
    }

    /// Samples `f(x, y)` at every node and zeroes the boundary.
    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = domain
            .coords
            .iter()
            .zip(&domain.boundary)
            .map(|(&[x, y], &b)| if b { 0.0 } else { f(x, y) })
            .collect();
        GridFunction {
            domain: Arc::clone(domain),
            values,
        }
    }

    /// Free-node values are taken from `values`; boundary entries are zeroed.
    pub fn from_values_masked(domain: &Arc<Domain>, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), domain.len());
        for (v, &b) in values.iter_mut().zip(&domain.boundary) {
            if b {
                *v = 0.0;
            }
        }
        GridFunction {
            domain: Arc::clone(domain),
            values,
        }
    }

    pub(crate) fn from_raw(domain: &Arc<Domain>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        GridFunction {
            domain: Arc::clone(domain),
            values,
        }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_domain(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain)
    }

    pub(crate) fn check_domain(&self, domain: &Arc<Domain>) -> Result<()> {
        if Arc::ptr_eq(&self.domain, domain) {
            Ok(())
        } else {
            Err(Error::Usage("grid function lives on a different domain".into()))
        }
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction::from_raw(&self.domain, self.values.iter().map(|v| c * v).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &GridFunction) -> GridFunction {
        debug_assert!(self.same_domain(other));
        GridFunction::from_raw(
            &self.domain,
            self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        )
    }

    pub fn abs(&self) -> GridFunction {
        GridFunction::from_raw(&self.domain, self.values.iter().map(|v| v.abs()).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Per-cell `|Du|`.
    pub fn gradient_magnitude(&self) -> Vec<f64> {
        self.domain.grad_magnitudes(&self.values)
    }

    pub fn norm(&self, which: Norm) -> Result<f64> {
        norm(self, which)
    }

    /// Writes the v1 CSV layout; `comments` become extra `# ` lines after the header.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        writeln!(w, "{GRIDFUNCTION_HEADER}")?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "node,x,y,value")?;
        for (i, (&[x, y], v)) in self.domain.coords.iter().zip(&self.values).enumerate() {
            writeln!(w, "{i},{x:.16e},{y:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    /// Reads the v1 CSV layout onto `domain`; node count and boundary must match.
    pub fn read_csv<R: BufRead>(domain: &Arc<Domain>, r: R) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == GRIDFUNCTION_HEADER => {}
            _ => return Err(Error::Format(format!("missing `{GRIDFUNCTION_HEADER}` header"))),
        }
        let mut values = vec![f64::NAN; domain.len()];
        let mut seen_columns = false;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_columns {
                if line != "node,x,y,value" {
                    return Err(Error::Format(format!("unexpected column header `{line}`")));
                }
                seen_columns = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 4 fields", lineno + 2)));
            }
            let node: usize = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad node index", lineno + 2)))?;
            let value: f64 = fields[3]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad value", lineno + 2)))?;
            if node >= values.len() {
                return Err(Error::Format(format!("node index {node} out of range")));
            }
            values[node] = value;
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Format(format!("node {i} missing from file")));
        }
        GridFunction::from_values(domain, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    Lm(f64),
    W1p(f64),
}

pub fn norm(u: &GridFunction, which: Norm) -> Result<f64> {
    let d = &u.domain;
    match which {
        Norm::Lm(m) if m >= 1.0 => Ok(d.lm_norm(&u.values, m)),
        Norm::Lm(m) => Err(Error::Parameter(format!("L^m norm needs m >= 1, got {m}"))),
        Norm::W1p(p) if p > 1.0 => Ok(d.w1p_norm(&u.values, p)),
        Norm::W1p(p) => Err(Error::Parameter(format!("W^{{1,p}} norm needs p > 1, got {p}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(d: &Arc<Domain>, rng: &mut ChaCha8Rng) -> GridFunction {
        GridFunction::from_values_masked(d, (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn square_three_by_three() {
        let d = build_domain(&DomainSpec::square(1.0, 3)).unwrap();
        assert_eq!(d.len(), 25);
        assert_eq!(d.free_nodes().len(), 9);
        assert_eq!(d.boundary().iter().filter(|&&b| b).count(), 16);
        for &i in d.free_nodes() {
            assert_eq!(d.weights()[i], 0.0625);
        }
        let total: f64 = d.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn radial_ball_volume() {
        let d = build_domain(&DomainSpec::radial_ball(3, 10.0, 99)).unwrap();
        assert_eq!(d.len(), 100);
        let total: f64 = d.weights().iter().sum();
        let exact = 4.0 / 3.0 * PI * 1000.0;
        assert!(((total - exact) / exact).abs() < 1e-10);
        // interior weights follow 4π r² Δr
        let dr = 10.0 / 99.0;
        for i in 10..90 {
            let r = i as f64 * dr;
            let approx = 4.0 * PI * r * r * dr;
            assert!(((d.weights()[i] - approx) / approx).abs() < 1e-2);
        }
    }

    #[test]
    fn polar_volumes_and_positivity() {
        for spec in [DomainSpec::disk(2.0, 6, 16), DomainSpec::annulus(0.5, 2.0, 5, 8)] {
            let d = build_domain(&spec).unwrap();
            assert!(d.weights().iter().all(|&w| w > 0.0));
            let total: f64 = d.weights().iter().sum();
            assert!(((total - d.volume()) / d.volume()).abs() < 1e-10, "{:?}", spec.kind);
        }
    }

    #[test]
    fn adjacency_is_symmetric() {
        for spec in [
            DomainSpec::square(1.0, 4),
            DomainSpec::disk(1.0, 4, 8),
            DomainSpec::radial_ball(3, 1.0, 5),
        ] {
            let d = build_domain(&spec).unwrap();
            for (a, adj) in d.adjacency().iter().enumerate() {
                for &b in adj {
                    assert!(d.adjacency()[b].contains(&a));
                }
            }
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = build_domain(&DomainSpec::disk(1.0, 4, 7)).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "domain.angular"));
        let err = build_domain(&DomainSpec::square(1.0, 2)).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "domain.resolution"));
        let err = build_domain(&DomainSpec::square(-1.0, 4)).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "domain.extent"));
    }

    #[test]
    fn zero_field_has_zero_gradient_and_norms() {
        let d = build_domain(&DomainSpec::disk(1.0, 4, 8)).unwrap();
        let u = GridFunction::zeros(&d);
        assert!(u.gradient_magnitude().iter().all(|&g| g == 0.0));
        assert_eq!(u.norm(Norm::Lm(2.0)).unwrap(), 0.0);
        assert_eq!(u.norm(Norm::W1p(1.5)).unwrap(), 0.0);
    }

    #[test]
    fn radial_linear_profile_gradient() {
        let d = build_domain(&DomainSpec::radial_ball(3, 2.0, 20)).unwrap();
        let a = 0.7;
        let u = GridFunction::from_fn(&d, |r, _| a * (2.0 - r));
        for g in u.gradient_magnitude() {
            assert!((g - a).abs() < 1e-12);
        }
    }

    #[test]
    fn square_x_coordinate_gradient() {
        let d = build_domain(&DomainSpec::square(2.0, 9)).unwrap();
        let u = GridFunction::from_fn(&d, |x, _| x);
        let Lattice::Square { side_nodes } = *d.lattice() else { unreachable!() };
        let g = u.gradient_magnitude();
        // cells whose corners are all interior
        for j in 1..side_nodes - 2 {
            for i in 1..side_nodes - 2 {
                assert!((g[j * (side_nodes - 1) + i] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_parameter_errors() {
        let d = build_domain(&DomainSpec::square(1.0, 3)).unwrap();
        let u = GridFunction::zeros(&d);
        assert!(matches!(u.norm(Norm::Lm(0.5)), Err(Error::Parameter(_))));
        assert!(matches!(u.norm(Norm::W1p(1.0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn homogeneity_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = build_domain(&DomainSpec::disk(1.5, 5, 8)).unwrap();
        let norms = [Norm::Lm(1.0), Norm::Lm(2.0), Norm::Lm(4.0), Norm::W1p(1.5), Norm::W1p(2.0)];
        for _ in 0..1000 {
            let u = random_fn(&d, &mut rng);
            let v = random_fn(&d, &mut rng);
            let w = u.axpy(1.0, &v);
            for n in norms {
                let (nu, nv, nw) = (u.norm(n).unwrap(), v.norm(n).unwrap(), w.norm(n).unwrap());
                assert!(nw <= nu + nv + 1e-12);
            }
        }
        let u = random_fn(&d, &mut rng);
        for n in norms {
            let a = u.scaled(2.0).norm(n).unwrap();
            let b = 2.0 * u.norm(n).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn gaussian_l2_norm_against_quadrature_oracle() {
        // oracle: composite Simpson on ∫₀^R e^{-2r²} 4π r² dr with 20000 panels
        let radius = 6.0;
        let panels = 20000;
        let h = radius / panels as f64;
        let g = |r: f64| (-2.0 * r * r).exp() * 4.0 * PI * r * r;
        let mut oracle = g(0.0) + g(radius);
        for k in 1..panels {
            oracle += g(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        oracle *= h / 3.0;
        assert!((oracle - (PI / 2.0).powf(1.5)).abs() < 1e-10);

        let mut last = f64::NAN;
        for n in [50, 100, 200, 400] {
            let d = build_domain(&DomainSpec::radial_ball(3, radius, n)).unwrap();
            let u = GridFunction::from_fn(&d, |r, _| (-r * r).exp());
            last = u.norm(Norm::Lm(2.0)).unwrap().powi(2);
        }
        assert!(((last - oracle) / oracle).abs() < 1e-3);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = build_domain(&DomainSpec::square(1.0, 4)).unwrap();
        let u = random_fn(&d, &mut rng);
        let mut buf = Vec::new();
        u.write_csv(&mut buf, &["config_hash abc".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(GRIDFUNCTION_HEADER));
        let back = GridFunction::read_csv(&d, buf.as_slice()).unwrap();
        assert_eq!(back.values(), u.values());
    }

    #[test]
    fn checked_constructor_rejects_boundary_values() {
        let d = build_domain(&DomainSpec::square(1.0, 3)).unwrap();
        let mut v = vec![0.0; d.len()];
        v[0] = 1.0;
        assert!(matches!(GridFunction::from_values(&d, v), Err(Error::Usage(_))));
    }
}
