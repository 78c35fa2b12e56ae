//! Small dense linear-algebra and weighting helpers shared by the filter,
//! the marginal-likelihood estimators and the mixture sampler.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `log|det(a)|` by LU with partial pivoting. `None` when a pivot is exactly zero.
pub fn log_abs_det(a: &DMatrix<f64>) -> Option<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut lu = a.clone();
    let mut acc = 0.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = lu[(k, k)].abs();
        for i in (k + 1)..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return None;
        }
        if piv != k {
            lu.swap_rows(piv, k);
        }
        let pivot = lu[(k, k)];
        acc += pivot.abs().ln();
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / pivot;
            if factor != 0.0 {
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= factor * u;
                }
            }
        }
    }
    Some(acc)
}

/// `I - gamma`.
pub fn identity_minus(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gamma.nrows();
    DMatrix::identity(n, n) - gamma
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Degenerate("singular linear system".into()))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
///
/// On failure retries once with diagonal jitter `1e-12 * trace / d`. An
/// all-zero matrix (a point mass) factors to zero.
pub fn cholesky_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    let trace = m.trace();
    if trace == 0.0 && m.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(d, d));
    }
    if trace.is_nan() || trace <= 0.0 || !trace.is_finite() {
        return Err(Error::Numerical(
            "scale matrix is not positive semidefinite".into(),
        ));
    }
    let jitter = 1e-12 * trace / d as f64;
    let mut jittered = m.clone();
    for i in 0..d {
        jittered[(i, i)] += jitter;
    }
    jittered
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed after jitter".into()))
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in log space. Returns `None` if every entry is `-inf`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_weights.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Some(w)
}

/// Kong effective sample size as a fraction of the sample count.
pub fn ess_fraction(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / (sq * weights.len() as f64)
}

/// Inverse-CDF quantiles of a weighted sample; `probs` in `[0, 1]`.
pub fn weighted_quantiles(values: &[f64], weights: &[f64], probs: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    if values.is_empty() {
        return vec![f64::NAN; probs.len()];
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(order.len());
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i] / total;
        cumulative.push(acc);
    }
    probs
        .iter()
        .map(|&p| {
            let pos = cumulative.partition_point(|&c| c < p);
            values[order[pos.min(order.len() - 1)]]
        })
        .collect()
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// Trigamma function, by upward recurrence then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * 5.0 / 66.0))))
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}
