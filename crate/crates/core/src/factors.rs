//! Sparse dynamic factors implied by the coefficient matrix.
//!
//! With `G = L diag(d) F` the structural equations read
//! `y = mu + L phi + nu` where `phi = diag(d) F y`. Each score row is
//! supported on a single common parental set and each loadings column on
//! that set's children.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::engine::{assemble_gamma, JointMoments, ModelSpec, SampleSet};
use crate::error::{Error, Result};
use crate::linalg::{identity_minus, weighted_quantiles};
use crate::structure::{structural_rank, ParentalPartition};

/// Entries with smaller magnitude are structural zeros.
pub const SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDecomposition {
    /// `q x p`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// `p` positive singular values.
    pub singular_values: DVector<f64>,
    /// `p x q`, orthonormal rows.
    pub scores: DMatrix<f64>,
    /// Parental set index of each factor.
    pub set_assignment: Vec<usize>,
    /// Pattern the factors were matched against, if canonicalized.
    pub reference: Option<DMatrix<bool>>,
}

impl FactorDecomposition {
    pub fn p(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.loadings * DMatrix::from_diagonal(&self.singular_values) * &self.scores
    }

    pub fn score_support(&self) -> DMatrix<bool> {
        self.scores.map(|v| v.abs() >= SUPPORT_TOL)
    }

    pub fn loading_support(&self) -> DMatrix<bool> {
        self.loadings.map(|v| v.abs() >= SUPPORT_TOL)
    }

    /// `phi = diag(d) F y`.
    pub fn factors(&self, y: &DVector<f64>) -> DVector<f64> {
        DMatrix::from_diagonal(&self.singular_values) * (&self.scores * y)
    }

    fn permuted(&self, order: &[usize]) -> Self {
        Self {
            loadings: self.loadings.select_columns(order),
            singular_values: self.singular_values.select_rows(order),
            scores: self.scores.select_rows(order),
            set_assignment: order.iter().map(|&i| self.set_assignment[i]).collect(),
            reference: self.reference.clone(),
        }
    }
}

fn snap(m: &mut DMatrix<f64>) {
    for v in m.iter_mut() {
        if v.abs() < SUPPORT_TOL {
            *v = 0.0;
        }
    }
}

/// SVD of each `children x members` block of `gamma`, truncated to the
/// block's numerical rank and ordered by decreasing singular value.
pub fn svd_factorize(gamma: &DMatrix<f64>, part: &ParentalPartition) -> Result<FactorDecomposition> {
    let q = gamma.nrows();
    let rank = structural_rank(part, Some(gamma));
    let mut columns: Vec<(f64, usize, DVector<f64>, DVector<f64>)> = Vec::with_capacity(rank.p);
    for (h, (set, &r)) in part.sets.iter().zip(&rank.per_set).enumerate() {
        if r == 0 {
            continue;
        }
        let block = gamma.select_rows(&set.children).select_columns(&set.members);
        let svd = nalgebra::SVD::new(block, true, true);
        let u = svd.u.expect("left vectors requested");
        let v_t = svd.v_t.expect("right vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for &i in &order[..r] {
            let mut loading = DVector::zeros(q);
            for (row, &c) in set.children.iter().enumerate() {
                loading[c] = u[(row, i)];
            }
            let mut score = DVector::zeros(q);
            for (col, &m) in set.members.iter().enumerate() {
                score[m] = v_t[(i, col)];
            }
            columns.push((svd.singular_values[i], h, loading, score));
        }
    }
    columns.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let p = columns.len();
    let mut loadings = DMatrix::zeros(q, p);
    let mut scores = DMatrix::zeros(p, q);
    for (k, (_, _, l, f)) in columns.iter().enumerate() {
        loadings.set_column(k, l);
        scores.set_row(k, &f.transpose());
    }
    snap(&mut loadings);
    snap(&mut scores);
    Ok(FactorDecomposition {
        loadings,
        singular_values: DVector::from_iterator(p, columns.iter().map(|c| c.0)),
        scores,
        set_assignment: columns.iter().map(|c| c.1).collect(),
        reference: None,
    })
}

/// Reference score pattern: for each set in `set_order` (partition order when
/// `None`), `counts[h]` rows supported on that set's members.
pub fn reference_pattern(part: &ParentalPartition, q: usize, set_order: Option<&[usize]>, counts: Option<&[usize]>) -> DMatrix<bool> {
    let default_order: Vec<usize> = (0..part.sets.len()).collect();
    let order = set_order.unwrap_or(&default_order);
    let mut rows = Vec::new();
    for &h in order {
        let n = counts.map_or(part.sets[h].rank_bound, |c| c[h]);
        for _ in 0..n {
            rows.push(&part.sets[h].members);
        }
    }
    let mut pat = DMatrix::from_element(rows.len(), q, false);
    for (i, members) in rows.iter().enumerate() {
        for &k in members.iter() {
            pat[(i, k)] = true;
        }
    }
    pat
}

fn kuhn(compatible: &[Vec<usize>], n_right: usize) -> Option<Vec<usize>> {
    fn augment(u: usize, comp: &[Vec<usize>], seen: &mut [bool], owner: &mut [usize]) -> bool {
        for &v in &comp[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v] == usize::MAX || augment(owner[v], comp, seen, owner) {
                owner[v] = u;
                return true;
            }
        }
        false
    }
    let mut owner = vec![usize::MAX; n_right];
    for u in 0..compatible.len() {
        let mut seen = vec![false; n_right];
        if !augment(u, compatible, &mut seen, &mut owner) {
            return None;
        }
    }
    Some(owner)
}

/// Canonical factor order and signs.
///
/// 1. Factors are matched to reference rows whose support contains theirs.
/// 2. Each score row is signed so its largest-magnitude entry is positive.
/// 3. Within a block of reference rows sharing one support, the `k`-th
///    position goes to the remaining factor with the largest absolute score
///    on the `k`-th member of that support.
pub fn canonicalize(dec: &FactorDecomposition, reference: &DMatrix<bool>) -> Result<FactorDecomposition> {
    let p = dec.p();
    if reference.nrows() != p || reference.ncols() != dec.scores.ncols() {
        return Err(Error::Structure(format!(
            "reference pattern is {}x{}, decomposition has {p} factors over {} series",
            reference.nrows(),
            reference.ncols(),
            dec.scores.ncols()
        )));
    }
    let support = dec.score_support();
    let compatible: Vec<Vec<usize>> = (0..p)
        .map(|i| {
            (0..p)
                .filter(|&k| {
                    let row = support.row(i);
                    row.iter().any(|&b| b)
                        && row.iter().zip(reference.row(k).iter()).all(|(&s, &r)| !s || r)
                })
                .collect()
        })
        .collect();
    let owner = kuhn(&compatible, p)
        .ok_or_else(|| Error::Structure("no factor permutation matches the reference pattern".into()))?;
    let mut out = dec.permuted(&owner);

    for i in 0..p {
        let val = out
            .scores
            .row(i)
            .iter()
            .fold(0.0f64, |acc, &v| if v.abs() > acc.abs() { v } else { acc });
        if val < 0.0 {
            out.scores.row_mut(i).neg_mut();
            out.loadings.column_mut(i).neg_mut();
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    let mut start = 0;
    while start < p {
        let mut end = start + 1;
        while end < p && reference.row(end) == reference.row(start) {
            end += 1;
        }
        let members: Vec<usize> = (0..reference.ncols()).filter(|&k| reference[(start, k)]).collect();
        let mut remaining: Vec<usize> = (start..end).collect();
        for (offset, slot) in order[start..end].iter_mut().enumerate() {
            let pivot = members.get(offset).copied();
            let pick = match pivot {
                Some(m) => *remaining
                    .iter()
                    .max_by(|&&a, &&b| out.scores[(a, m)].abs().total_cmp(&out.scores[(b, m)].abs()).then(b.cmp(&a)))
                    .expect("non-empty block"),
                None => remaining[0],
            };
            *slot = pick;
            remaining.retain(|&x| x != pick);
        }
        start = end;
    }
    let mut out = out.permuted(&order);
    out.reference = Some(reference.clone());
    Ok(out)
}

/// `(V(phi), C(phi, nu))` for one parameter set.
pub fn factor_covariances(dec: &FactorDecomposition, joint: &JointMoments) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = joint.gamma.nrows();
    if dec.p() == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, q)));
    }
    let df = DMatrix::from_diagonal(&dec.singular_values) * &dec.scores;
    let sigma = joint
        .omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("joint precision is singular".into()))?;
    let mut v_phi = &df * sigma * df.transpose();
    crate::linalg::symmetrize(&mut v_phi);
    let a = identity_minus(&joint.gamma)
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("I - G is singular".into()))?;
    let inv_lambda = DMatrix::from_diagonal(&joint.precisions.map(|l| 1.0 / l));
    Ok((v_phi, &df * a * inv_lambda))
}

/// Factor trajectories from a sequence of coefficient estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorSeries {
    pub times: Vec<String>,
    pub factors: Vec<DVector<f64>>,
    pub singular_values: Vec<DVector<f64>>,
    /// Per time, per factor (5%, 50%, 95%) when computed from draws.
    pub bands: Option<Vec<Vec<[f64; 3]>>>,
}

/// One time point of a factor trajectory input.
#[derive(Debug, Clone)]
pub struct FactorInput<'a> {
    pub time: String,
    pub gamma: DMatrix<f64>,
    pub y: DVector<f64>,
    pub samples: Option<(&'a ModelSpec, &'a SampleSet)>,
}

/// Factorizes and canonicalizes each time's coefficient estimate against a
/// fixed reference; bands come from per-draw factorizations when samples
/// are attached.
pub fn factor_series(inputs: &[FactorInput<'_>], part: &ParentalPartition, reference: &DMatrix<bool>) -> Result<FactorSeries> {
    let mut out = FactorSeries {
        times: Vec::with_capacity(inputs.len()),
        factors: Vec::with_capacity(inputs.len()),
        singular_values: Vec::with_capacity(inputs.len()),
        bands: None,
    };
    let mut bands = Vec::new();
    let mut any_bands = false;
    for inp in inputs {
        let dec = canonicalize(&svd_factorize(&inp.gamma, part)?, reference)?;
        out.times.push(inp.time.clone());
        out.factors.push(dec.factors(&inp.y));
        out.singular_values.push(dec.singular_values.clone());
        if let Some((spec, set)) = inp.samples {
            any_bands = true;
            bands.push(draw_bands(spec, set, &inp.y, part, reference)?);
        } else {
            bands.push(Vec::new());
        }
    }
    if any_bands {
        out.bands = Some(bands);
    }
    Ok(out)
}

fn draw_bands(spec: &ModelSpec, set: &SampleSet, y: &DVector<f64>, part: &ParentalPartition, reference: &DMatrix<bool>) -> Result<Vec<[f64; 3]>> {
    let p = reference.nrows();
    let mut values = vec![Vec::with_capacity(set.len()); p];
    let mut weights = Vec::with_capacity(set.len());
    for (d, &w) in set.draws.iter().zip(&set.weights) {
        if w == 0.0 {
            continue;
        }
        let gamma = assemble_gamma(spec, &d.states);
        let dec = canonicalize(&svd_factorize(&gamma, part)?, reference)?;
        let phi = dec.factors(y);
        for k in 0..p {
            values[k].push(phi[k]);
        }
        weights.push(w);
    }
    Ok(values
        .iter()
        .map(|v| {
            let qs = weighted_quantiles(v, &weights, &[0.05, 0.5, 0.95]);
            [qs[0], qs[1], qs[2]]
        })
        .collect())
}
