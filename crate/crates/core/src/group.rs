//! Finite symmetry groups acting on a grid by node permutations.
//!
//! An element is stored as `perm` with `perm[i]` the image of node `i`, and
//! acts on nodal values by `(g·u)[perm[i]] = u[i]`, i.e. `(g·u)(x) = u(g⁻¹x)`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Domain, GridFunction, Lattice};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    Trivial,
    /// Cyclic group of `k` rotations.
    Rotations,
    /// `k` rotations together with `k` reflections, order `2k`.
    Dihedral,
    /// Identity and the reflection `x ↦ -x` (polar grids: `θ ↦ -θ`).
    Reflections,
    /// Product `O(1) × O(1)` generated by the two axis reflections.
    BlockProduct,
}

impl GroupLabel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trivial" => Ok(GroupLabel::Trivial),
            "rotations" => Ok(GroupLabel::Rotations),
            "dihedral" => Ok(GroupLabel::Dihedral),
            "reflections" => Ok(GroupLabel::Reflections),
            "block_product" => Ok(GroupLabel::BlockProduct),
            other => Err(Error::config("group.label", format!("unknown group label `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupLabel::Trivial => "trivial",
            GroupLabel::Rotations => "rotations",
            GroupLabel::Dihedral => "dihedral",
            GroupLabel::Reflections => "reflections",
            GroupLabel::BlockProduct => "block_product",
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub struct SymmetryGroup {
    domain: Arc<Domain>,
    label: GroupLabel,
    order_param: usize,
    elements: Vec<Vec<usize>>,
    table: Vec<Vec<usize>>,
    orbit_of: Vec<usize>,
    orbits: Vec<Vec<usize>>,
}

/// Closes the generators under composition and validates the resulting action.
pub fn build_group(domain: &Arc<Domain>, label: GroupLabel, k: usize) -> Result<Arc<SymmetryGroup>> {
    let n = domain.len();
    let gens = generators(domain, label, k)?;
    let identity: Vec<usize> = (0..n).collect();
    let mut elements = vec![identity.clone()];
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    index.insert(identity, 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(e) = queue.pop_front() {
        for g in &gens {
            let prod = compose(g, &elements[e]);
            if !index.contains_key(&prod) {
                index.insert(prod.clone(), elements.len());
                queue.push_back(elements.len());
                elements.push(prod);
            }
        }
    }
    let group_elements = elements.len();
    let mut table = vec![vec![0; group_elements]; group_elements];
    for a in 0..group_elements {
        for b in 0..group_elements {
            let prod = compose(&elements[a], &elements[b]);
            table[a][b] = *index.get(&prod).ok_or_else(|| {
                Error::SymmetryCompatibility(format!("elements {a} and {b} do not compose inside the group"))
            })?;
        }
    }
    for (a, row) in table.iter().enumerate() {
        if !row.contains(&0) {
            return Err(Error::SymmetryCompatibility(format!("element {a} has no inverse")));
        }
    }
    for g in &elements {
        validate_element(domain, g)?;
    }
    let (orbit_of, orbits) = orbit_partition(n, &elements);
    Ok(Arc::new(SymmetryGroup {
        domain: Arc::clone(domain),
        label,
        order_param: k,
        elements,
        table,
        orbit_of,
        orbits,
    }))
}

/// `(a ∘ b)[i] = a[b[i]]`: apply `b` first.
fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&i| a[i]).collect()
}

fn validate_element(domain: &Domain, g: &[usize]) -> Result<()> {
    let w = domain.weights();
    let bnd = domain.boundary();
    for (i, &gi) in g.iter().enumerate() {
        if w[i] != w[gi] {
            return Err(Error::SymmetryCompatibility(format!(
                "nodes ({i}, {gi}) are related by the action but carry weights {} and {}",
                w[i], w[gi]
            )));
        }
        if bnd[i] != bnd[gi] {
            return Err(Error::SymmetryCompatibility(format!(
                "node pair ({i}, {gi}) maps boundary to interior"
            )));
        }
    }
    let adj = domain.adjacency();
    for (a, b) in domain.edges() {
        if adj[g[a]].binary_search(&g[b]).is_err() {
            return Err(Error::SymmetryCompatibility(format!(
                "adjacent pair ({a}, {b}) maps to non-adjacent ({}, {})",
                g[a], g[b]
            )));
        }
    }
    Ok(())
}

fn orbit_partition(n: usize, elements: &[Vec<usize>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut orbit_of = vec![usize::MAX; n];
    let mut orbits = Vec::new();
    for i in 0..n {
        if orbit_of[i] != usize::MAX {
            continue;
        }
        let members: BTreeSet<usize> = elements.iter().map(|g| g[i]).collect();
        let id = orbits.len();
        for &m in &members {
            orbit_of[m] = id;
        }
        orbits.push(members.into_iter().collect());
    }
    (orbit_of, orbits)
}

fn generators(domain: &Domain, label: GroupLabel, k: usize) -> Result<Vec<Vec<usize>>> {
    let incompatible = |why: String| Err(Error::SymmetryCompatibility(why));
    match *domain.lattice() {
        Lattice::Radial { .. } => match label {
            GroupLabel::Trivial => Ok(vec![]),
            _ => incompatible(format!(
                "{label} acts trivially on a radial profile; the radial grid only carries the trivial label"
            )),
        },
        Lattice::Square { side_nodes } => {
            let s = side_nodes as i64;
            let map = |f: &dyn Fn(i64, i64) -> (i64, i64)| -> Vec<usize> {
                (0..side_nodes * side_nodes)
                    .map(|id| {
                        let (i, j) = ((id % side_nodes) as i64, (id / side_nodes) as i64);
                        let (a, b) = f(2 * i - (s - 1), 2 * j - (s - 1));
                        let (i2, j2) = ((a + s - 1) / 2, (b + s - 1) / 2);
                        (j2 * s + i2) as usize
                    })
                    .collect()
            };
            let rot90 = map(&|a, b| (-b, a));
            let rot180 = map(&|a, b| (-a, -b));
            let flip_x = map(&|a, b| (-a, b));
            let flip_y = map(&|a, b| (a, -b));
            let rotation = |k: usize| -> Result<Vec<Vec<usize>>> {
                match k {
                    1 => Ok(vec![]),
                    2 => Ok(vec![rot180.clone()]),
                    4 => Ok(vec![rot90.clone()]),
                    _ => Err(Error::SymmetryCompatibility(format!(
                        "square grid supports rotation orders 1, 2 and 4, not {k}"
                    ))),
                }
            };
            match label {
                GroupLabel::Trivial => Ok(vec![]),
                GroupLabel::Rotations => rotation(k),
                GroupLabel::Dihedral => {
                    let mut g = rotation(k)?;
                    g.push(flip_x);
                    Ok(g)
                }
                GroupLabel::Reflections => Ok(vec![flip_x]),
                GroupLabel::BlockProduct => Ok(vec![flip_x, flip_y]),
            }
        }
        Lattice::Polar { rings, angular: m } => {
            let map = |f: &dyn Fn(usize) -> usize| -> Vec<usize> {
                (0..rings * m).map(|id| (id / m) * m + f(id % m)).collect()
            };
            let rotation = |k: usize| -> Result<Vec<Vec<usize>>> {
                if k == 0 || m % k != 0 {
                    return Err(Error::SymmetryCompatibility(format!(
                        "rotation order {k} does not divide the angular resolution {m}: node pair (0, {}) has no exact image",
                        if k == 0 { 0 } else { m / k }
                    )));
                }
                if k == 1 {
                    return Ok(vec![]);
                }
                let shift = m / k;
                Ok(vec![map(&|a| (a + shift) % m)])
            };
            let flip = map(&|a| (m - a) % m);
            match label {
                GroupLabel::Trivial => Ok(vec![]),
                GroupLabel::Rotations => rotation(k),
                GroupLabel::Dihedral => {
                    let mut g = rotation(k)?;
                    g.push(flip);
                    Ok(g)
                }
                GroupLabel::Reflections => Ok(vec![flip]),
                GroupLabel::BlockProduct => {
                    if m % 2 != 0 {
                        return Err(Error::SymmetryCompatibility(format!(
                            "reflection θ ↦ π - θ needs an even angular resolution, got {m}"
                        )));
                    }
                    let half = m / 2;
                    Ok(vec![flip, map(&|a| (half + m - a) % m)])
                }
            }
        }
    }
}

impl SymmetryGroup {
    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }
    pub fn label(&self) -> GroupLabel {
        self.label
    }
    /// The `k` the group was built with.
    pub fn order_param(&self) -> usize {
        self.order_param
    }
    /// `|G|`.
    pub fn order(&self) -> usize {
        self.elements.len()
    }
    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }
    /// `table[a][b]` is the index of `elements[a] ∘ elements[b]`.
    pub fn table(&self) -> &[Vec<usize>] {
        &self.table
    }
    pub fn orbits(&self) -> &[Vec<usize>] {
        &self.orbits
    }
    pub fn orbit_of(&self, node: usize) -> usize {
        self.orbit_of[node]
    }
    pub fn is_trivial(&self) -> bool {
        self.orbits.len() == self.domain.len()
    }

    /// `g·u` for the element with index `g`.
    pub fn act(&self, g: usize, u: &GridFunction) -> Result<GridFunction> {
        u.check_domain(&self.domain)?;
        Ok(GridFunction::from_raw(&self.domain, self.act_values(g, u.values())))
    }

    pub fn act_values(&self, g: usize, u: &[f64]) -> Vec<f64> {
        let perm = &self.elements[g];
        let mut out = vec![0.0; u.len()];
        for (i, &gi) in perm.iter().enumerate() {
            out[gi] = u[i];
        }
        out
    }

    /// `Au = |G|⁻¹ Σ_g g·u`, computed as orbit means so that `Au` is exactly
    /// constant on every orbit.
    pub fn average(&self, u: &GridFunction) -> Result<GridFunction> {
        u.check_domain(&self.domain)?;
        Ok(GridFunction::from_raw(&self.domain, self.average_values(u.values())))
    }

    pub fn average_values(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for orbit in &self.orbits {
            let mean = orbit.iter().map(|&i| u[i]).sum::<f64>() / orbit.len() as f64;
            for &i in orbit {
                out[i] = mean;
            }
        }
        out
    }

    /// Largest deviation of `u` from its orbit means.
    pub fn invariance_defect(&self, u: &[f64]) -> f64 {
        let a = self.average_values(u);
        a.iter().zip(u).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn fix_basis(&self) -> FixBasis {
        FixBasis {
            representatives: self.orbits.iter().map(|o| o[0]).collect(),
            sizes: self.orbits.iter().map(Vec::len).collect(),
            orbit_of: self.orbit_of.clone(),
        }
    }

    /// Writes `node,orbit,representative,orbit_size`.
    pub fn write_orbit_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node,orbit,representative,orbit_size")?;
        for i in 0..self.domain.len() {
            let o = &self.orbits[self.orbit_of[i]];
            writeln!(w, "{i},{},{},{}", self.orbit_of[i], o[0], o.len())?;
        }
        Ok(())
    }
}

/// Coordinates on `Fix(G)`: one value per orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixBasis {
    /// Smallest node index of each orbit.
    pub representatives: Vec<usize>,
    pub sizes: Vec<usize>,
    pub orbit_of: Vec<usize>,
}

impl FixBasis {
    pub fn dim(&self) -> usize {
        self.representatives.len()
    }

    pub fn coordinates(&self, u: &[f64]) -> Vec<f64> {
        self.representatives.iter().map(|&r| u[r]).collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        self.orbit_of.iter().map(|&o| coords[o]).collect()
    }
}

/// A finite group of orthogonal matrices acting on ℝ^N.
#[derive(Clone, Debug)]
pub struct PointGroup {
    dim: usize,
    matrices: Vec<Vec<f64>>,
}

impl PointGroup {
    pub fn rotations(k: usize) -> Self {
        let matrices = (0..k.max(1))
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / k.max(1) as f64;
                vec![th.cos(), -th.sin(), th.sin(), th.cos()]
            })
            .collect();
        PointGroup { dim: 2, matrices }
    }

    pub fn dihedral(k: usize) -> Self {
        let mut g = PointGroup::rotations(k);
        let refl: Vec<Vec<f64>> = g
            .matrices
            .iter()
            .map(|m| vec![m[0], -m[1], m[2], -m[3]])
            .collect();
        g.matrices.extend(refl);
        g
    }

    /// Row-major `dim × dim` matrices; each must be orthogonal to 1e-12.
    pub fn from_matrices(dim: usize, matrices: Vec<Vec<f64>>) -> Result<Self> {
        for (idx, m) in matrices.iter().enumerate() {
            if m.len() != dim * dim {
                return Err(Error::Parameter(format!("matrix {idx} is not {dim}×{dim}")));
            }
            for a in 0..dim {
                for b in 0..dim {
                    let dot: f64 = (0..dim).map(|k| m[k * dim + a] * m[k * dim + b]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    if (dot - want).abs() > 1e-12 {
                        return Err(Error::Parameter(format!("matrix {idx} is not orthogonal")));
                    }
                }
            }
        }
        Ok(PointGroup { dim, matrices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn orbit(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut pts: Vec<Vec<f64>> = Vec::new();
        for m in &self.matrices {
            let gy: Vec<f64> = (0..d).map(|a| (0..d).map(|b| m[a * d + b] * y[b]).sum()).collect();
            let scale = 1e-9 * (1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt());
            if !pts.iter().any(|p| dist(p, &gy) <= scale) {
                pts.push(gy);
            }
        }
        pts
    }

    /// Largest number of orbit points of `y` whose open `r`-balls are
    /// pairwise disjoint (centres at distance at least `2r`).
    pub fn orbit_packing_count(&self, y: &[f64], r: f64) -> Result<usize> {
        if !(r > 0.0) {
            return Err(Error::Parameter(format!("packing radius must be positive, got {r}")));
        }
        if y.len() != self.dim {
            return Err(Error::Parameter(format!("point has dimension {}, group acts on ℝ^{}", y.len(), self.dim)));
        }
        let pts = self.orbit(y);
        let n = pts.len();
        let conflict: Vec<Vec<bool>> = (0..n)
            .map(|a| (0..n).map(|b| a != b && dist(&pts[a], &pts[b]) < 2.0 * r).collect())
            .collect();
        let mut best = 0;
        let mut chosen = Vec::new();
        max_independent(&conflict, 0, &mut chosen, &mut best);
        Ok(best)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn max_independent(conflict: &[Vec<bool>], next: usize, chosen: &mut Vec<usize>, best: &mut usize) {
    let n = conflict.len();
    if chosen.len() + (n - next) <= *best {
        return;
    }
    if next == n {
        *best = chosen.len();
        return;
    }
    if chosen.iter().all(|&c| !conflict[c][next]) {
        chosen.push(next);
        max_independent(conflict, next + 1, chosen, best);
        chosen.pop();
    }
    max_independent(conflict, next + 1, chosen, best);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(d: &Arc<Domain>, rng: &mut ChaCha8Rng) -> GridFunction {
        GridFunction::from_values_masked(d, (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn trivial_group() {
        let d = build_domain(&DomainSpec::square(1.0, 4)).unwrap();
        let g = build_group(&d, GroupLabel::Trivial, 1).unwrap();
        assert_eq!(g.order(), 1);
        assert_eq!(g.fix_basis().dim(), d.len());
    }

    #[test]
    fn square_dihedral_has_order_eight_and_closed_table() {
        let d = build_domain(&DomainSpec::square(1.0, 5)).unwrap();
        let g = build_group(&d, GroupLabel::Dihedral, 4).unwrap();
        assert_eq!(g.order(), 8);
        // exhaustive closure: every product found, every row a permutation
        for row in g.table() {
            let set: BTreeSet<usize> = row.iter().copied().collect();
            assert_eq!(set.len(), 8);
        }
        for a in 0..8 {
            for b in 0..8 {
                let direct = compose(&g.elements()[a], &g.elements()[b]);
                assert_eq!(direct, g.elements()[g.table()[a][b]]);
            }
        }
    }

    #[test]
    fn polar_rotation_incompatibility() {
        let d = build_domain(&DomainSpec::disk(1.0, 4, 12).with_max_rotation_order(4)).unwrap();
        let err = build_group(&d, GroupLabel::Rotations, 5).unwrap_err();
        assert!(matches!(err, Error::SymmetryCompatibility(_)));
        assert!(build_group(&d, GroupLabel::Rotations, 6).is_ok());
    }

    #[test]
    fn radial_only_trivial() {
        let d = build_domain(&DomainSpec::radial_ball(3, 1.0, 5)).unwrap();
        assert!(build_group(&d, GroupLabel::Trivial, 1).is_ok());
        assert!(build_group(&d, GroupLabel::Rotations, 2).is_err());
    }

    #[test]
    fn indicator_average_on_rotation_orbit() {
        let d = build_domain(&DomainSpec::square(1.0, 5)).unwrap();
        let g = build_group(&d, GroupLabel::Rotations, 4).unwrap();
        // node (i, j) = (2, 4) in a 7-wide grid: off-axis
        let node = 4 * 7 + 2;
        let mut v = vec![0.0; d.len()];
        v[node] = 1.0;
        let u = GridFunction::from_values(&d, v).unwrap();
        let a = g.average(&u).unwrap();
        // oracle: enumerate the orbit by applying each element to the node
        let orbit: BTreeSet<usize> = g.elements().iter().map(|e| e[node]).collect();
        assert_eq!(orbit.len(), 4);
        for (i, &x) in a.values().iter().enumerate() {
            assert_eq!(x, if orbit.contains(&i) { 0.25 } else { 0.0 });
        }
    }

    #[test]
    fn average_matches_direct_sum_over_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = build_domain(&DomainSpec::disk(1.0, 4, 8)).unwrap();
        let g = build_group(&d, GroupLabel::Dihedral, 8).unwrap();
        assert_eq!(g.order(), 16);
        for _ in 0..20 {
            let u = random(&d, &mut rng);
            let mut direct = vec![0.0; d.len()];
            for e in 0..g.order() {
                for (acc, x) in direct.iter_mut().zip(g.act_values(e, u.values())) {
                    *acc += x / g.order() as f64;
                }
            }
            let a = g.average(&u).unwrap();
            for (x, y) in a.values().iter().zip(&direct) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn odd_square_rotation_orbit_sizes() {
        let d = build_domain(&DomainSpec::square(1.0, 5)).unwrap();
        let g = build_group(&d, GroupLabel::Rotations, 4).unwrap();
        let centre = 3 * 7 + 3;
        for orbit in g.orbits() {
            if orbit.contains(&centre) {
                assert_eq!(orbit.len(), 1);
            } else {
                assert_eq!(orbit.len(), 4);
            }
        }
        let total: usize = g.fix_basis().sizes.iter().sum();
        assert_eq!(total, d.len());
    }

    #[test]
    fn fix_dimension_matches_numerical_rank_of_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = build_domain(&DomainSpec::square(1.0, 3)).unwrap();
        let g = build_group(&d, GroupLabel::Dihedral, 4).unwrap();
        let n = d.len();
        let samples = n + 5;
        let cols: Vec<Vec<f64>> = (0..samples)
            .map(|_| g.average_values(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let m = nalgebra::DMatrix::from_fn(n, samples, |i, j| cols[j][i]);
        assert_eq!(m.rank(1e-9), g.fix_basis().dim());
    }

    #[test]
    fn reconstruction_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = build_domain(&DomainSpec::disk(1.0, 3, 8)).unwrap();
        let g = build_group(&d, GroupLabel::BlockProduct, 0).unwrap();
        assert_eq!(g.order(), 4);
        let u = g.average(&random(&d, &mut rng)).unwrap();
        let b = g.fix_basis();
        assert_eq!(b.reconstruct(&b.coordinates(u.values())), u.values());
    }

    #[test]
    fn orbit_packing() {
        let g = PointGroup::rotations(8);
        assert_eq!(g.orbit_packing_count(&[0.0, 0.0], 1.0).unwrap(), 1);
        assert_eq!(g.orbit_packing_count(&[10.0, 0.0], 1.0).unwrap(), 8);
        let five = g.orbit_packing_count(&[10.0, 0.0], 5.0).unwrap();
        assert!(five < 8);
        // oracle: adjacent orbit points sit 2·10·sin(π/8) apart, second neighbours 2·10·sin(π/4)
        assert!(2.0 * 10.0 * (std::f64::consts::PI / 8.0).sin() < 10.0);
        assert!(2.0 * 10.0 * (std::f64::consts::PI / 4.0).sin() >= 10.0);
        assert_eq!(five, 4);
        assert!(matches!(g.orbit_packing_count(&[1.0, 0.0], 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn from_matrices_rejects_non_orthogonal() {
        assert!(PointGroup::from_matrices(2, vec![vec![1.0, 0.0, 0.0, 2.0]]).is_err());
        assert!(PointGroup::from_matrices(2, vec![vec![0.0, 1.0, 1.0, 0.0]]).is_ok());
    }
}
