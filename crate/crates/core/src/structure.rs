//! Simultaneous parental graphs and the purely structural quantities they
//! imply: child sets, common parental sets, the moral (conditional
//! independence) pattern of the joint precision, structural factor rank and
//! eigenvalue diagnostics of the coefficient matrix.
//!
//! Orientation: `gamma[(j, h)]` is the coefficient of parent `h` in the
//! regression of series `j`, so row `j` of the coefficient matrix is
//! supported on `parents(j)` and column `h` on `children(h)`.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, Schur};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum series count for which the exhaustive disjoint-cycle search runs.
pub const CYCLE_SEARCH_LIMIT: usize = 12;

/// Relative tolerance for zero eigenvalues and for numerical rank.
pub const ZERO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStructure {
    labels: Vec<String>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct GraphDocument {
    labels: Vec<String>,
    #[serde(default)]
    parents: BTreeMap<String, Vec<String>>,
}

impl GraphStructure {
    /// Builds a graph over `q` series with default labels `y0, y1, ...`.
    pub fn new(q: usize, parental_lists: Vec<Vec<usize>>) -> Result<Self> {
        let labels = (0..q).map(|i| format!("y{i}")).collect();
        Self::with_labels(labels, parental_lists)
    }

    /// Parent lists are stored in ascending index order; the parental block of
    /// each series' state vector follows that order.
    pub fn with_labels(labels: Vec<String>, mut parental_lists: Vec<Vec<usize>>) -> Result<Self> {
        let q = labels.len();
        if parental_lists.len() != q {
            return Err(Error::Structure(format!(
                "{} parent lists for {q} series",
                parental_lists.len()
            )));
        }
        let mut children = vec![Vec::new(); q];
        for (j, list) in parental_lists.iter_mut().enumerate() {
            list.sort_unstable();
            for w in list.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::Structure(format!(
                        "series {j} lists parent {} twice",
                        w[0]
                    )));
                }
            }
            for &h in list.iter() {
                if h >= q {
                    return Err(Error::Structure(format!(
                        "series {j} has parent index {h} outside 0..{q}"
                    )));
                }
                if h == j {
                    return Err(Error::Structure(format!("series {j} lists itself as a parent")));
                }
                children[h].push(j);
            }
        }
        Ok(Self {
            labels,
            parents: parental_lists,
            children,
        })
    }

    /// Builds from labels and a `child label -> parent labels` map.
    pub fn from_labelled(
        labels: Vec<String>,
        parents: &BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let index: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        if index.len() != labels.len() {
            return Err(Error::Structure("duplicate series labels".into()));
        }
        let mut lists = vec![Vec::new(); labels.len()];
        for (child, ps) in parents {
            let &j = index
                .get(child.as_str())
                .ok_or_else(|| Error::Structure(format!("unknown series label {child:?}")))?;
            for p in ps {
                let &h = index
                    .get(p.as_str())
                    .ok_or_else(|| Error::Structure(format!("unknown parent label {p:?}")))?;
                lists[j].push(h);
            }
        }
        Self::with_labels(labels, lists)
    }

    /// Parses the standalone JSON form `{"labels": [...], "parents": {label: [labels]}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        Self::from_labelled(doc.labels, &doc.parents)
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDocument {
            labels: self.labels.clone(),
            parents: self
                .parents
                .iter()
                .enumerate()
                .filter(|(_, ps)| !ps.is_empty())
                .map(|(j, ps)| {
                    (
                        self.labels[j].clone(),
                        ps.iter().map(|&h| self.labels[h].clone()).collect(),
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph document serializes")
    }

    pub fn q(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn parents(&self, j: usize) -> &[usize] {
        &self.parents[j]
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn is_empty_graph(&self) -> bool {
        self.edge_count() == 0
    }

    /// Series that are parents of nothing (the zero columns of the coefficient matrix).
    pub fn childless(&self) -> Vec<usize> {
        (0..self.q()).filter(|&j| self.children[j].is_empty()).collect()
    }

    /// Kahn's algorithm on the parent -> child orientation.
    pub fn is_acyclic(&self) -> bool {
        let q = self.q();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: Vec<usize> = (0..q).filter(|&j| indegree[j] == 0).collect();
        let mut seen = 0;
        while let Some(h) = ready.pop() {
            seen += 1;
            for &c in &self.children[h] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
        seen == q
    }

    /// Strongly connected components, each sorted ascending; singletons included.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let mut g = DiGraph::<(), ()>::with_capacity(self.q(), self.edge_count());
        let nodes: Vec<_> = (0..self.q()).map(|_| g.add_node(())).collect();
        for (j, ps) in self.parents.iter().enumerate() {
            for &h in ps {
                g.add_edge(nodes[h], nodes[j], ());
            }
        }
        let mut comps: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }

    /// True when at least one cycle exists and every directed cycle has even
    /// order. A strongly connected digraph has only even cycles exactly when
    /// its underlying undirected graph is bipartite.
    pub fn has_only_even_cycles(&self) -> bool {
        let mut any_cycle = false;
        for comp in self.strongly_connected_components() {
            if comp.len() < 2 {
                continue;
            }
            any_cycle = true;
            let mut colour: BTreeMap<usize, bool> = BTreeMap::new();
            let mut stack = vec![(comp[0], false)];
            let member = |v: &usize| comp.binary_search(v).is_ok();
            while let Some((v, c)) = stack.pop() {
                if let Some(&existing) = colour.get(&v) {
                    if existing != c {
                        return false;
                    }
                    continue;
                }
                colour.insert(v, c);
                for &w in self.parents[v].iter().chain(self.children[v].iter()) {
                    if member(&w) {
                        stack.push((w, !c));
                    }
                }
            }
        }
        any_cycle
    }

    /// Boolean support of the coefficient matrix.
    pub fn gamma_pattern(&self) -> DMatrix<bool> {
        let q = self.q();
        let mut p = DMatrix::from_element(q, q, false);
        for (j, ps) in self.parents.iter().enumerate() {
            for &h in ps {
                p[(j, h)] = true;
            }
        }
        p
    }

    /// Checks that a numeric coefficient matrix is supported within the graph.
    pub fn check_gamma(&self, gamma: &DMatrix<f64>) -> Result<()> {
        let q = self.q();
        if gamma.nrows() != q || gamma.ncols() != q {
            return Err(Error::Dimension(format!(
                "coefficient matrix is {}x{}, graph has {q} series",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        let pattern = self.gamma_pattern();
        for j in 0..q {
            for h in 0..q {
                if gamma[(j, h)] != 0.0 && !pattern[(j, h)] {
                    return Err(Error::Structure(format!(
                        "coefficient ({j}, {h}) is non-zero but {h} is not a parent of {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One common parental set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParentalSet {
    pub members: Vec<usize>,
    /// Union of the members' child sets.
    pub children: Vec<usize>,
    /// `min(|members|, |children|)`.
    pub rank_bound: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParentalPartition {
    pub sets: Vec<ParentalSet>,
    /// Sum of the per-set rank bounds.
    pub total: usize,
    /// Set only by [`structural_rank`] with numeric coefficients.
    pub full_rank: Option<bool>,
}

impl ParentalPartition {
    /// Index of the set containing `series`, if it is a parent at all.
    pub fn set_of(&self, series: usize) -> Option<usize> {
        self.sets
            .iter()
            .position(|s| s.members.binary_search(&series).is_ok())
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root so set order is deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Partitions the parents into common parental sets: two parents are joined
/// whenever they share a child. Sets are ordered by their smallest member.
pub fn common_parental_sets(g: &GraphStructure) -> ParentalPartition {
    let q = g.q();
    let mut uf = DisjointSets::new(q);
    for j in 0..q {
        let ps = g.parents(j);
        for w in ps.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for h in 0..q {
        if !g.children(h).is_empty() {
            let root = uf.find(h);
            groups.entry(root).or_default().push(h);
        }
    }
    let mut sets: Vec<ParentalSet> = groups
        .into_values()
        .map(|members| {
            let mut children: Vec<usize> = members
                .iter()
                .flat_map(|&h| g.children(h).iter().copied())
                .collect();
            children.sort_unstable();
            children.dedup();
            let rank_bound = members.len().min(children.len());
            ParentalSet {
                members,
                children,
                rank_bound,
            }
        })
        .collect();
    sets.sort_by_key(|s| s.members[0]);
    let total = sets.iter().map(|s| s.rank_bound).sum();
    ParentalPartition {
        sets,
        total,
        full_rank: None,
    }
}

/// Moral pattern: `(i, j)` is set when one is a parent of the other or both
/// are parents of a common child. This is the structural support of
/// `(I - G)' L (I - G)`. The diagonal is always set.
pub fn moral_pattern(g: &GraphStructure) -> DMatrix<bool> {
    let q = g.q();
    let mut p = DMatrix::from_element(q, q, false);
    for i in 0..q {
        p[(i, i)] = true;
    }
    for j in 0..q {
        let ps = g.parents(j);
        for &h in ps {
            p[(j, h)] = true;
            p[(h, j)] = true;
        }
        for (a, &h1) in ps.iter().enumerate() {
            for &h2 in &ps[a + 1..] {
                p[(h1, h2)] = true;
                p[(h2, h1)] = true;
            }
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuralRank {
    pub p: usize,
    /// `None` when no numeric coefficients were supplied.
    pub full_rank: Option<bool>,
    pub per_set: Vec<usize>,
}

/// Numerical rank with singular values below `ZERO_TOL * largest` treated as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let largest = sv.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > ZERO_TOL * largest).count()
}

/// Factor count implied by the partition. With a numeric coefficient matrix
/// each block is checked for full rank; the block rank is computed from the
/// `children x members` column block, whose rank equals that of the
/// corresponding diagonal block of `G'G`.
pub fn structural_rank(part: &ParentalPartition, gamma: Option<&DMatrix<f64>>) -> StructuralRank {
    match gamma {
        None => StructuralRank {
            p: part.total,
            full_rank: None,
            per_set: part.sets.iter().map(|s| s.rank_bound).collect(),
        },
        Some(gamma) => {
            let per_set: Vec<usize> = part
                .sets
                .iter()
                .map(|s| numerical_rank(&gamma.select_rows(&s.children).select_columns(&s.members)))
                .collect();
            let full = part
                .sets
                .iter()
                .zip(&per_set)
                .all(|(s, &r)| r == s.rank_bound);
            StructuralRank {
                p: per_set.iter().sum(),
                full_rank: Some(full),
                per_set,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDiagnostics {
    pub acyclic: bool,
    pub gershgorin_ok: bool,
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    pub zero_count: usize,
    /// Largest number of nodes covered by vertex-disjoint cycles; only
    /// computed for graphs with at most [`CYCLE_SEARCH_LIMIT`] series.
    pub disjoint_cycle_bound: Option<usize>,
}

/// Largest vertex count of a collection of disjoint cycles within `comp`.
///
/// A vertex subset is covered by disjoint cycles exactly when it admits a
/// fixed-point-free successor permutation, i.e. a perfect matching in the
/// bipartite successor graph restricted to the subset. Exhaustive over subsets.
fn max_cycle_cover(g: &GraphStructure, comp: &[usize]) -> usize {
    let k = comp.len();
    if k < 2 {
        return 0;
    }
    let local = |v: usize| comp.binary_search(&v).ok();
    let succ: Vec<u32> = comp
        .iter()
        .map(|&v| {
            g.parents(v)
                .iter()
                .filter_map(|&h| local(h))
                .fold(0u32, |m, i| m | (1 << i))
        })
        .collect();
    let mut best = 0;
    for mask in 1u32..(1u32 << k) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        if has_perfect_matching(&succ, mask) {
            best = size;
        }
    }
    best
}

fn has_perfect_matching(succ: &[u32], mask: u32) -> bool {
    let k = succ.len();
    let mut match_of = vec![usize::MAX; k];
    fn augment(
        u: usize,
        succ: &[u32],
        mask: u32,
        seen: &mut u32,
        match_of: &mut [usize],
    ) -> bool {
        let mut options = succ[u] & mask;
        while options != 0 {
            let v = options.trailing_zeros() as usize;
            options &= options - 1;
            if *seen & (1 << v) != 0 {
                continue;
            }
            *seen |= 1 << v;
            if match_of[v] == usize::MAX || augment(match_of[v], succ, mask, seen, match_of) {
                match_of[v] = u;
                return true;
            }
        }
        false
    }
    for u in 0..k {
        if mask & (1 << u) == 0 {
            continue;
        }
        let mut seen = 0u32;
        if !augment(u, succ, mask, &mut seen, &mut match_of) {
            return false;
        }
    }
    true
}

/// Eigenvalue and cycle diagnostics of a coefficient matrix on `g`.
///
/// Eigenvalues are computed per strongly connected component (trivial
/// components contribute exact zeros). When the disjoint-cycle bound `r` is
/// available, the characteristic polynomial has `lambda^(q-r)` as a factor,
/// so the `k - r_k` smallest-magnitude values of each component are set to
/// exactly zero.
pub fn eigen_diagnostics(g: &GraphStructure, gamma: &DMatrix<f64>) -> Result<EigenDiagnostics> {
    g.check_gamma(gamma)?;
    let q = g.q();
    let acyclic = g.is_acyclic();
    let gershgorin_ok = (0..q).all(|i| g.parents(i).iter().map(|&h| gamma[(i, h)].abs()).sum::<f64>() < 1.0);
    let with_bound = q <= CYCLE_SEARCH_LIMIT;

    let mut eigenvalues = Vec::with_capacity(q);
    let mut bound = 0usize;
    for comp in g.strongly_connected_components() {
        if comp.len() == 1 {
            eigenvalues.push(Complex::new(0.0, 0.0));
            continue;
        }
        let block = gamma.select_rows(&comp).select_columns(&comp);
        let mut vals = self::eigenvalues(&block)?;
        if with_bound {
            let r = max_cycle_cover(g, &comp);
            bound += r;
            vals.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
            for v in vals.iter_mut().take(comp.len() - r) {
                *v = Complex::new(0.0, 0.0);
            }
        }
        eigenvalues.extend(vals);
    }
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = ZERO_TOL * spectral_radius.max(1.0);
    let zero_count = eigenvalues.iter().filter(|z| z.norm() < tol).count();
    Ok(EigenDiagnostics {
        acyclic,
        gershgorin_ok,
        eigenvalues,
        spectral_radius,
        zero_count,
        disjoint_cycle_bound: with_bound.then_some(bound),
    })
}

/// Iteration cap for the real Schur decomposition.
const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues of a dense square matrix. The Schur iteration is capped; when
/// it stalls (as on equimodular spectra such as a single weighted cycle), the
/// iteration is retried on diagonally shifted copies and the shift removed.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for shift in [0.0, 0.37 * scale, -0.61 * scale, 1.13 * scale] {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, SCHUR_MAX_ITER) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| z - shift).collect());
        }
    }
    Err(Error::Numerical("eigenvalue iteration did not converge".into()))
}

/// Spectral radius of a dense square matrix; `NaN` if the eigenvalue
/// iteration does not converge.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    eigenvalues(m).map_or(f64::NAN, |vals| vals.iter().map(|z| z.norm()).fold(0.0, f64::max))
}
