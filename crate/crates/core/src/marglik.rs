//! One-step predictive densities `p(y_t | D_{t-1})`, model monitoring and
//! the discount grid search.
//!
//! The joint predictive factors as `f(y) * g(y)`: `f` is the product of the
//! per-series conditional T densities given parents and `g` is the
//! expectation of `|det(I - G)|` under the per-series posteriors of the
//! parental coefficients given `y`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, ModelSpec, StepOptions};
use crate::error::{Error, Result};
use crate::io::data::Dataset;
use crate::linalg::{identity_minus, log_abs_det, log_sum_exp, symmetrize};
use crate::rng::{self, purpose};
use crate::udlm::{
    conjugate_update, marginal_t_subvector, one_step_forecast, DiscountSpec, MultivariateTSampler,
    NGPosterior, TForecast,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MargLikMethod {
    /// Coefficients drawn from their posteriors given `y`.
    Posterior,
    /// Coefficients drawn from their priors.
    Prior,
}

impl MargLikMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Posterior => "posterior",
            Self::Prior => "prior",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MargLikRecord {
    pub t: usize,
    pub log_f: f64,
    pub log_g: f64,
    pub log_pred: f64,
    /// Delta-method variance of the Monte Carlo estimate of `log_pred`.
    pub estimator_variance: f64,
    pub method: MargLikMethod,
}

/// `log f(y)`: sum of conditional T log densities given parents.
pub fn predictive_product_f(spec: &ModelSpec, priors: &[NGPosterior], exogenous: &[DVector<f64>], y: &DVector<f64>) -> Result<f64> {
    check_inputs(spec, priors, exogenous, y)?;
    let mut acc = 0.0;
    for j in 0..spec.q() {
        let f = spec.regression_vector(j, &exogenous[j], y);
        acc += one_step_forecast(&priors[j], &f)?.log_pdf(y[j]);
    }
    Ok(acc)
}

fn check_inputs(spec: &ModelSpec, priors: &[NGPosterior], exogenous: &[DVector<f64>], y: &DVector<f64>) -> Result<()> {
    let q = spec.q();
    if priors.len() != q || exogenous.len() != q || y.len() != q {
        return Err(Error::Dimension(format!(
            "{} priors, {} exogenous vectors and {} observations for {q} series",
            priors.len(),
            exogenous.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Log of the mean of `exp(terms)` and the delta-method variance of that log.
fn log_mean_and_variance(terms: &[f64]) -> Result<(f64, f64)> {
    let r = terms.len() as f64;
    let log_mean = log_sum_exp(terms) - r.ln();
    if !log_mean.is_finite() {
        return Err(Error::Numerical("Monte Carlo average is zero or infinite".into()));
    }
    if terms.len() < 2 {
        return Ok((log_mean, 0.0));
    }
    // Var[log mean] ~ Var[x] / (R mean^2), with x / mean = exp(term - log_mean)
    let ss: f64 = terms.iter().map(|v| ((v - log_mean).exp() - 1.0).powi(2)).sum();
    Ok((log_mean, ss / (r - 1.0) / r))
}

fn parental_samplers(spec: &ModelSpec, ngs: &[NGPosterior]) -> Result<Vec<Option<MultivariateTSampler>>> {
    (0..spec.q())
        .map(|j| {
            let idx = ngs[j].layout.parental_indices();
            if idx.is_empty() {
                Ok(None)
            } else {
                marginal_t_subvector(&ngs[j], &idx)?.sampler().map(Some)
            }
        })
        .collect()
}

fn gamma_from_blocks(spec: &ModelSpec, blocks: &[Option<DVector<f64>>]) -> DMatrix<f64> {
    let q = spec.q();
    let mut g = DMatrix::zeros(q, q);
    for j in 0..q {
        if let Some(b) = &blocks[j] {
            for (k, &h) in spec.graph.parents(j).iter().enumerate() {
                g[(j, h)] = b[k];
            }
        }
    }
    g
}

fn exact_record(t: usize, log_f: f64, method: MargLikMethod) -> MargLikRecord {
    MargLikRecord {
        t,
        log_f,
        log_g: 0.0,
        log_pred: log_f,
        estimator_variance: 0.0,
        method,
    }
}

/// Estimator drawing parental coefficients from their posterior given `y`.
#[allow(clippy::too_many_arguments)]
pub fn posterior_estimator(
    spec: &ModelSpec,
    priors: &[NGPosterior],
    exogenous: &[DVector<f64>],
    y: &DVector<f64>,
    samples: usize,
    seed: u64,
    t: usize,
) -> Result<MargLikRecord> {
    let log_f = predictive_product_f(spec, priors, exogenous, y)?;
    if spec.graph.is_acyclic() {
        return Ok(exact_record(t, log_f, MargLikMethod::Posterior));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let posts = (0..spec.q())
        .map(|j| conjugate_update(&priors[j], &spec.regression_vector(j, &exogenous[j], y), y[j]))
        .collect::<Result<Vec<_>>>()?;
    let samplers = parental_samplers(spec, &posts)?;
    let terms: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[purpose::MARGLIK, t as u64, r as u64]);
            let blocks: Vec<Option<DVector<f64>>> =
                samplers.iter().map(|s| s.as_ref().map(|s| s.draw(&mut rng))).collect();
            log_abs_det(&identity_minus(&gamma_from_blocks(spec, &blocks))).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    let (log_g, var) = log_mean_and_variance(&terms)?;
    Ok(MargLikRecord {
        t,
        log_f,
        log_g,
        log_pred: log_f + log_g,
        estimator_variance: var,
        method: MargLikMethod::Posterior,
    })
}

/// Predictive T of `y_j` given its parental coefficients are known.
///
/// Conditioning the normal-gamma prior on the parental block `gamma` gives
/// dof `n + d`, variance estimate `s (n + Q) / (n + d)` with `Q` the
/// standardized distance of `gamma` from its mean, and the usual Gaussian
/// conditional for the exogenous block.
pub fn conditional_forecast(
    prior: &NGPosterior,
    exogenous: &DVector<f64>,
    parent_values: &DVector<f64>,
    gamma: &DVector<f64>,
) -> Result<TForecast> {
    let layout = prior.layout;
    let (e, d) = (layout.exogenous, layout.parental);
    let m_g = prior.mean.rows(e, d);
    let m_gg = prior.scale.view((e, e), (d, d)).clone_owned();
    let chol = m_gg
        .cholesky()
        .ok_or_else(|| Error::Numerical("parental prior scale is not positive definite".into()))?;
    let diff = gamma - m_g;
    let sol = chol.solve(&diff);
    let quad = diff.dot(&sol);
    let n = prior.dof;
    let dof = n + d as f64;
    let var_est = prior.var_est * (n + quad) / dof;
    let mut location = parent_values.dot(gamma);
    let mut scale_q = var_est;
    if e > 0 {
        let m_pg = prior.scale.view((0, e), (e, d)).clone_owned();
        let cond_mean = prior.mean.rows(0, e) + &m_pg * &sol;
        let mut cond_scale = prior.scale.view((0, 0), (e, e)).clone_owned() - &m_pg * chol.solve(&m_pg.transpose());
        symmetrize(&mut cond_scale);
        cond_scale *= var_est / prior.var_est;
        location += exogenous.dot(&cond_mean);
        scale_q += (&cond_scale * exogenous).dot(exogenous);
    }
    Ok(TForecast {
        location,
        scale_q,
        dof,
    })
}

/// Estimator drawing parental coefficients from their priors.
#[allow(clippy::too_many_arguments)]
pub fn prior_estimator(
    spec: &ModelSpec,
    priors: &[NGPosterior],
    exogenous: &[DVector<f64>],
    y: &DVector<f64>,
    samples: usize,
    seed: u64,
    t: usize,
) -> Result<MargLikRecord> {
    let log_f = predictive_product_f(spec, priors, exogenous, y)?;
    if spec.graph.is_acyclic() {
        return Ok(exact_record(t, log_f, MargLikMethod::Prior));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let samplers = parental_samplers(spec, priors)?;
    let parent_values: Vec<DVector<f64>> = (0..spec.q())
        .map(|j| DVector::from_iterator(spec.graph.parents(j).len(), spec.graph.parents(j).iter().map(|&h| y[h])))
        .collect();
    // series without parents contribute their analytic term
    let mut fixed = 0.0;
    for j in 0..spec.q() {
        if samplers[j].is_none() {
            fixed += one_step_forecast(&priors[j], &spec.regression_vector(j, &exogenous[j], y))?.log_pdf(y[j]);
        }
    }
    let terms = (0..samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[purpose::MARGLIK, t as u64, r as u64]);
            let blocks: Vec<Option<DVector<f64>>> =
                samplers.iter().map(|s| s.as_ref().map(|s| s.draw(&mut rng))).collect();
            let ld = log_abs_det(&identity_minus(&gamma_from_blocks(spec, &blocks))).unwrap_or(f64::NEG_INFINITY);
            let mut acc = ld + fixed;
            for j in 0..spec.q() {
                if let Some(g) = &blocks[j] {
                    acc += conditional_forecast(&priors[j], &exogenous[j], &parent_values[j], g)?.log_pdf(y[j]);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (log_pred, var) = log_mean_and_variance(&terms)?;
    Ok(MargLikRecord {
        t,
        log_f,
        log_g: log_pred - log_f,
        log_pred,
        estimator_variance: var,
        method: MargLikMethod::Prior,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn estimate(
    spec: &ModelSpec,
    priors: &[NGPosterior],
    exogenous: &[DVector<f64>],
    y: &DVector<f64>,
    method: MargLikMethod,
    samples: usize,
    seed: u64,
    t: usize,
) -> Result<MargLikRecord> {
    match method {
        MargLikMethod::Posterior => posterior_estimator(spec, priors, exogenous, y, samples, seed, t),
        MargLikMethod::Prior => prior_estimator(spec, priors, exogenous, y, samples, seed, t),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorTrajectory {
    pub times: Vec<String>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Probability of the first model from equal prior odds.
    pub probability: Vec<f64>,
    pub excluded: Vec<String>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sequential Bayes-factor monitor of model A against model B.
pub fn monitor(a: &[(String, f64)], b: &[(String, f64)], excluded: &BTreeSet<String>) -> Result<MonitorTrajectory> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("{} vs {} records", a.len(), b.len())));
    }
    let mut out = MonitorTrajectory {
        times: Vec::with_capacity(a.len()),
        increments: Vec::with_capacity(a.len()),
        cumulative: Vec::with_capacity(a.len()),
        probability: Vec::with_capacity(a.len()),
        excluded: Vec::new(),
    };
    let mut cum = 0.0;
    for ((ta, la), (tb, lb)) in a.iter().zip(b) {
        if ta != tb {
            return Err(Error::Misaligned(format!("time {ta} against {tb}")));
        }
        let inc = if excluded.contains(ta) {
            out.excluded.push(ta.clone());
            0.0
        } else {
            la - lb
        };
        cum += inc;
        out.times.push(ta.clone());
        out.increments.push(inc);
        out.cumulative.push(cum);
        out.probability.push(logistic(cum));
    }
    Ok(out)
}

/// Cumulative log predictive curve for one discount setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCurve {
    pub state: f64,
    pub volatility: f64,
    pub times: Vec<String>,
    pub cumulative: Vec<f64>,
    /// Cumulative curve minus the baseline's.
    pub relative: Vec<f64>,
}

/// Runs the filter once per `(state, volatility)` pair, recording cumulative
/// log predictive densities over rows before `end`.
pub fn discount_grid(
    spec: &ModelSpec,
    data: &Dataset,
    grid: &[(f64, f64)],
    baseline: (f64, f64),
    seed: u64,
    end: Option<usize>,
) -> Result<Vec<GridCurve>> {
    let opts = StepOptions {
        marglik: Some(MargLikMethod::Posterior),
        ..StepOptions::default()
    };
    let run_one = |&(state, volatility): &(f64, f64)| -> Result<GridCurve> {
        let d = DiscountSpec::new(state, state, volatility)?;
        let mut s = spec.clone();
        for series in &mut s.series {
            series.discount = d;
        }
        let (_, records) = engine::run(&s, data, seed, &opts, end)?;
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(records.len());
        let mut times = Vec::with_capacity(records.len());
        for r in &records {
            acc += r.marglik.as_ref().expect("requested").log_pred;
            cumulative.push(acc);
            times.push(r.time.clone());
        }
        Ok(GridCurve {
            state,
            volatility,
            times,
            cumulative,
            relative: Vec::new(),
        })
    };
    let base = run_one(&baseline)?;
    let mut curves = grid.iter().map(run_one).collect::<Result<Vec<_>>>()?;
    for c in &mut curves {
        c.relative = c.cumulative.iter().zip(&base.cumulative).map(|(a, b)| a - b).collect();
    }
    Ok(curves)
}
