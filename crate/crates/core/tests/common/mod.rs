#![allow(dead_code)]

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use sgdlm::engine::{ModelSpec, Regressor};
use sgdlm::structure::GraphStructure;
use sgdlm::udlm::{DiscountSpec, NGPosterior, StateLayout};

/// Composite Gauss-Legendre nodes and weights on `[a, b]`.
pub fn panels(a: f64, b: f64, count: usize, degree: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree).unwrap());
    let h = (b - a) / count as f64;
    let mut out = Vec::with_capacity(count * degree);
    for p in 0..count {
        let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
        for (x, w) in rule.as_node_weight_pairs() {
            out.push((0.5 * ((hi - lo) * x + hi + lo), 0.5 * (hi - lo) * w));
        }
    }
    out
}

/// `log of integral over lambda` of prior x likelihood for one series with a
/// scalar state `g`: `y ~ N(g x, 1/lambda)`, `g | lambda ~ N(m, M/(s lambda))`,
/// `lambda ~ Ga(n/2, n s/2)`.
pub fn log_lambda_integrated(g: f64, x: f64, y: f64, ng: &NGPosterior) -> f64 {
    let (m, big_m, n, s) = (ng.mean[0], ng.scale[(0, 0)], ng.dof, ng.var_est);
    let c = big_m / s;
    let a0 = 0.5 * n;
    let b0 = 0.5 * n * s;
    let b = b0 + (g - m).powi(2) / (2.0 * c) + 0.5 * (y - g * x).powi(2);
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * c.ln() + a0 * b0.ln() + a0.ln() - (a0 + 1.0) * b.ln()
}

/// Two mutually dependent series with no exogenous regressors.
pub fn cyclic_pair(samples: usize, priors: [NGPosterior; 2]) -> ModelSpec {
    let graph = GraphStructure::new(2, vec![vec![1], vec![0]]).unwrap();
    let [p0, p1] = priors;
    let mut spec = ModelSpec::uniform(graph, vec![], DiscountSpec::none(), |_| p0.clone(), samples).unwrap();
    spec.series[1].prior = p1;
    spec
}

pub fn scalar_ng(m: f64, big_m: f64, n: f64, s: f64) -> NGPosterior {
    NGPosterior::new(
        DVector::from_element(1, m),
        DMatrix::from_element(1, 1, big_m),
        n,
        s,
        StateLayout::new(0, 1),
    )
    .unwrap()
}

pub fn constant_only(graph: GraphStructure, prior: impl Fn(StateLayout) -> NGPosterior, samples: usize, discount: DiscountSpec) -> ModelSpec {
    ModelSpec::uniform(graph, vec![Regressor::Constant], discount, prior, samples).unwrap()
}

/// Dense conditional normal of `idx_a` given `idx_b = y_b`.
pub fn gaussian_conditional(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    idx_a: &[usize],
    idx_b: &[usize],
    y_b: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s_ab = cov.select_rows(idx_a).select_columns(idx_b);
    let s_bb = cov.select_rows(idx_b).select_columns(idx_b);
    let s_aa = cov.select_rows(idx_a).select_columns(idx_a);
    let s_bb_inv = s_bb.try_inverse().unwrap();
    let m = mean.select_rows(idx_a) + &s_ab * &s_bb_inv * (y_b - mean.select_rows(idx_b));
    let c = s_aa - &s_ab * s_bb_inv * s_ab.transpose();
    (m, c)
}

pub fn normal_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let k = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let d = x - mean;
    -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + (d.transpose() * inv * &d)[(0, 0)])
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}
