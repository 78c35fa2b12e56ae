//! Recouple/decouple sequential filter.
//!
//! Each series runs its own conjugate normal-gamma update given the
//! contemporaneous values of its parents. The product of those naive
//! posteriors is sampled and reweighted by `|det(I - G)|` to recover the
//! joint posterior, which is then projected back onto per-series
//! normal-gamma forms by moment matching before evolving to the next time.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::data::Dataset;
use crate::linalg::{
    digamma, ess_fraction, identity_minus, log_abs_det, normalize_log_weights, solve, symmetrize,
    trigamma,
};
use crate::marglik::{self, MargLikMethod, MargLikRecord};
use crate::rng::{self, purpose};
use crate::structure::{spectral_radius, GraphStructure};
use crate::udlm::{
    conjugate_update, evolve, one_step_forecast, DiscountSpec, EvolutionSampler, NGPosterior,
    NGSampler, StateLayout, TForecast,
};

/// One element of a series' exogenous regression vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regressor {
    Constant,
    /// Value of `series` at `lag` periods back.
    Lag { series: usize, lag: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSpec {
    pub regressors: Vec<Regressor>,
    /// State evolution matrix; identity when absent.
    pub evolution: Option<DMatrix<f64>>,
    pub discount: DiscountSpec,
    pub prior: NGPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub graph: GraphStructure,
    pub series: Vec<SeriesSpec>,
    /// Monte Carlo sample size.
    pub samples: usize,
    /// Give zero weight to draws whose coefficient matrix has spectral radius >= 1.
    pub reject_explosive: bool,
}

impl ModelSpec {
    /// Same design, prior, discounts and evolution for every series.
    pub fn uniform(
        graph: GraphStructure,
        regressors: Vec<Regressor>,
        discount: DiscountSpec,
        prior_for: impl Fn(StateLayout) -> NGPosterior,
        samples: usize,
    ) -> Result<Self> {
        let series = (0..graph.q())
            .map(|j| {
                let layout = StateLayout::new(regressors.len(), graph.parents(j).len());
                SeriesSpec {
                    regressors: regressors.clone(),
                    evolution: None,
                    discount,
                    prior: prior_for(layout),
                }
            })
            .collect();
        let spec = Self {
            graph,
            series,
            samples,
            reject_explosive: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn q(&self) -> usize {
        self.graph.q()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if self.series.len() != q {
            return Err(Error::Dimension(format!(
                "{} series specs for {q} graph nodes",
                self.series.len()
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        for (j, s) in self.series.iter().enumerate() {
            let layout = StateLayout::new(s.regressors.len(), self.graph.parents(j).len());
            if s.prior.layout != layout {
                return Err(Error::Dimension(format!(
                    "series {j}: prior layout {:?}, design implies {layout:?}",
                    s.prior.layout
                )));
            }
            s.prior.validate()?;
            s.discount.validate()?;
            for r in &s.regressors {
                if let Regressor::Lag { series, lag } = *r {
                    if series >= q || lag == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "series {j}: lagged regressor ({series}, {lag}) is invalid"
                        )));
                    }
                }
            }
            if let Some(g) = &s.evolution {
                let d = layout.dim();
                if g.nrows() != d || g.ncols() != d {
                    return Err(Error::Dimension(format!(
                        "series {j}: {}x{} evolution for state length {d}",
                        g.nrows(),
                        g.ncols()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self, j: usize) -> StateLayout {
        self.series[j].prior.layout
    }

    /// Longest lag used by any series; filtering starts at this row.
    pub fn max_lag(&self) -> usize {
        self.series
            .iter()
            .flat_map(|s| s.regressors.iter())
            .map(|r| match r {
                Regressor::Constant => 0,
                Regressor::Lag { lag, .. } => *lag,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn evolution_matrix(&self, j: usize) -> DMatrix<f64> {
        match &self.series[j].evolution {
            Some(g) => g.clone(),
            None => {
                let d = self.layout(j).dim();
                DMatrix::identity(d, d)
            }
        }
    }

    /// Exogenous vector of series `j` at time `t`; `lookup(series, time)`
    /// supplies past values.
    pub fn exogenous_with(
        &self,
        j: usize,
        t: usize,
        lookup: impl Fn(usize, usize) -> f64,
    ) -> Result<DVector<f64>> {
        let regs = &self.series[j].regressors;
        let mut x = DVector::zeros(regs.len());
        for (i, r) in regs.iter().enumerate() {
            x[i] = match *r {
                Regressor::Constant => 1.0,
                Regressor::Lag { series, lag } => {
                    if lag > t {
                        return Err(Error::InvalidArgument(format!(
                            "lag {lag} unavailable at time index {t}"
                        )));
                    }
                    lookup(series, t - lag)
                }
            };
        }
        Ok(x)
    }

    /// All exogenous vectors at time `t` from observed data.
    pub fn exogenous(&self, data: &Dataset, t: usize) -> Result<Vec<DVector<f64>>> {
        (0..self.q())
            .map(|j| self.exogenous_with(j, t, |s, u| data.values[(u, s)]))
            .collect()
    }

    /// `F = (x, y_parents)`.
    pub fn regression_vector(&self, j: usize, exogenous: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let ps = self.graph.parents(j);
        let mut f = DVector::zeros(exogenous.len() + ps.len());
        f.rows_mut(0, exogenous.len()).copy_from(exogenous);
        for (k, &h) in ps.iter().enumerate() {
            f[exogenous.len() + k] = y[h];
        }
        f
    }

    pub fn priors(&self) -> Vec<NGPosterior> {
        self.series.iter().map(|s| s.prior.clone()).collect()
    }

    pub fn discounts(&self) -> Vec<DiscountSpec> {
        self.series.iter().map(|s| s.discount).collect()
    }
}

/// One joint parameter draw: per-series states and precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub states: Vec<DVector<f64>>,
    pub precisions: Vec<f64>,
}

/// Weighted Monte Carlo representation of the joint posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub draws: Vec<Draw>,
    pub weights: Vec<f64>,
    pub ess_fraction: f64,
    /// Per-draw completed observation vectors, when they differ by draw.
    pub observations: Option<Vec<DVector<f64>>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Uniformly weighted set.
    pub fn uniform(draws: Vec<Draw>) -> Self {
        let r = draws.len();
        Self {
            draws,
            weights: vec![1.0 / r as f64; r],
            ess_fraction: 1.0,
            observations: None,
        }
    }

    pub fn weighted_mean_gamma(&self, spec: &ModelSpec) -> DMatrix<f64> {
        let q = spec.q();
        let mut acc = DMatrix::zeros(q, q);
        for (d, &w) in self.draws.iter().zip(&self.weights) {
            if w != 0.0 {
                acc += assemble_gamma(spec, &d.states) * w;
            }
        }
        acc
    }
}

/// `(alpha, Omega)` of the implied joint normal for `y` given one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    pub alpha: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub precisions: DVector<f64>,
}

/// Places each series' parental coefficients into row `j` of a `q x q` matrix.
pub fn assemble_gamma(spec: &ModelSpec, states: &[DVector<f64>]) -> DMatrix<f64> {
    let q = spec.q();
    let mut g = DMatrix::zeros(q, q);
    for j in 0..q {
        let layout = spec.layout(j);
        for (k, &h) in spec.graph.parents(j).iter().enumerate() {
            g[(j, h)] = states[j][layout.exogenous + k];
        }
    }
    g
}

/// Exogenous means `mu_j = x_j' phi_j`.
pub fn assemble_mu(spec: &ModelSpec, states: &[DVector<f64>], exogenous: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_fn(spec.q(), |j, _| {
        let e = spec.layout(j).exogenous;
        states[j].rows(0, e).dot(&exogenous[j])
    })
}

pub fn joint_moments(gamma: &DMatrix<f64>, mu: &DVector<f64>, precisions: &DVector<f64>) -> Result<JointMoments> {
    let a = identity_minus(gamma);
    let alpha = solve(&a, mu).map_err(|_| Error::Degenerate("I - G is singular".into()))?;
    let mut omega = a.transpose() * DMatrix::from_diagonal(precisions) * &a;
    symmetrize(&mut omega);
    Ok(JointMoments {
        alpha,
        omega,
        gamma: gamma.clone(),
        mu: mu.clone(),
        precisions: precisions.clone(),
    })
}

/// Per-series naive posteriors and conditional one-step forecasts at `y`.
pub fn naive_update(
    spec: &ModelSpec,
    priors: &[NGPosterior],
    exogenous: &[DVector<f64>],
    y: &DVector<f64>,
) -> Result<(Vec<NGPosterior>, Vec<TForecast>)> {
    let mut post = Vec::with_capacity(spec.q());
    let mut fc = Vec::with_capacity(spec.q());
    for j in 0..spec.q() {
        let f = spec.regression_vector(j, &exogenous[j], y);
        fc.push(one_step_forecast(&priors[j], &f)?);
        post.push(conjugate_update(&priors[j], &f, y[j])?);
    }
    Ok((post, fc))
}

pub fn samplers(ngs: &[NGPosterior]) -> Result<Vec<NGSampler>> {
    ngs.iter().map(NGSampler::new).collect()
}

/// One joint draw from a product of normal-gamma summaries.
pub fn draw_product<R: Rng + ?Sized>(samplers: &[NGSampler], rng: &mut R) -> Draw {
    let mut states = Vec::with_capacity(samplers.len());
    let mut precisions = Vec::with_capacity(samplers.len());
    for s in samplers {
        let (theta, lambda) = s.draw(rng);
        states.push(theta);
        precisions.push(lambda);
    }
    Draw { states, precisions }
}

/// `log|det(I - G)|` per draw, `-inf` for singular or rejected draws.
pub fn log_det_weights(spec: &ModelSpec, draws: &[Draw]) -> Vec<f64> {
    draws
        .par_iter()
        .map(|d| {
            let g = assemble_gamma(spec, &d.states);
            if spec.reject_explosive && spectral_radius(&g).partial_cmp(&1.0) != Some(std::cmp::Ordering::Less) {
                return f64::NEG_INFINITY;
            }
            log_abs_det(&identity_minus(&g)).unwrap_or(f64::NEG_INFINITY)
        })
        .collect()
}

/// Normalizes log-weights and applies the degeneracy policy.
pub fn finalize_weights(log_w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let r = log_w.len();
    let w = normalize_log_weights(log_w)
        .ok_or_else(|| Error::Degenerate("every draw has zero weight".into()))?;
    let ess = ess_fraction(&w);
    if ess < 10.0 / r as f64 {
        return Err(Error::Degenerate(format!(
            "effective sample size fraction {ess:.3e} below {:.3e}",
            10.0 / r as f64
        )));
    }
    Ok((w, ess))
}

/// Determinant-weighted importance sample from the product of naive posteriors.
pub fn is_update(spec: &ModelSpec, naive: &[NGPosterior], seed: u64, t: usize) -> Result<SampleSet> {
    let ss = samplers(naive)?;
    let draws: Vec<Draw> = (0..spec.samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[purpose::UPDATE, t as u64, r as u64]);
            draw_product(&ss, &mut rng)
        })
        .collect();
    if exact_without_weights(spec) {
        return Ok(SampleSet::uniform(draws));
    }
    let log_w = log_det_weights(spec, &draws);
    let (weights, ess) = finalize_weights(&log_w)?;
    Ok(SampleSet {
        draws,
        weights,
        ess_fraction: ess,
        observations: None,
    })
}

/// Acyclic graphs have unit determinant for every draw, so the naive
/// posterior is already exact.
pub fn exact_without_weights(spec: &ModelSpec) -> bool {
    !spec.reject_explosive && spec.graph.is_acyclic()
}

const DOF_LOWER: f64 = 1e-3;
const DOF_UPPER: f64 = 1e6;

/// Solves `digamma(n/2) - log(n/2) = target` for `n` in `[1e-3, 1e6]`.
///
/// The left side is increasing in `n`; targets outside the attainable range
/// are clamped to the bracket ends.
pub fn solve_dof(target: f64, init: f64) -> Result<f64> {
    let h = |x: f64| digamma(x) - x.ln();
    let (mut lo, mut hi) = (0.5 * DOF_LOWER, 0.5 * DOF_UPPER);
    if target <= h(lo) {
        return Ok(DOF_LOWER);
    }
    if target >= h(hi) {
        return Ok(DOF_UPPER);
    }
    let mut x = (0.5 * init).clamp(lo, hi);
    for _ in 0..100 {
        let v = h(x) - target;
        if v.abs() <= 1e-14 * target.abs().max(1e-300) {
            return Ok(2.0 * x);
        }
        if v > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = trigamma(x) - 1.0 / x;
        let mut next = x - v / slope;
        if next.is_nan() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x {
            return Ok(2.0 * next);
        }
        x = next;
    }
    Err(Error::Numerical(format!(
        "degrees-of-freedom solve did not converge for target {target}"
    )))
}

/// Moment-matching projection of a weighted sample onto per-series
/// normal-gamma forms. `init_dof` seeds each Newton solve.
pub fn vb_decouple(set: &SampleSet, layouts: &[StateLayout], init_dof: &[f64]) -> Result<Vec<NGPosterior>> {
    let r = set.len();
    let total: f64 = set.weights.iter().sum();
    if r < 2 || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Degenerate(format!(
            "projection needs at least two normalized draws (have {r}, weight sum {total})"
        )));
    }
    let ess = 1.0 / set.weights.iter().map(|w| w * w).sum::<f64>();
    if ess < 2.0 {
        return Err(Error::Degenerate(format!("effective sample size {ess:.3} below 2")));
    }
    (0..layouts.len())
        .into_par_iter()
        .map(|j| {
            let d = layouts[j].dim();
            let mut e_lambda = 0.0;
            let mut e_log = 0.0;
            let mut lt = DVector::zeros(d);
            for (draw, &w) in set.draws.iter().zip(&set.weights) {
                let lam = draw.precisions[j];
                e_lambda += w * lam;
                e_log += w * lam.ln();
                lt += &draw.states[j] * (w * lam);
            }
            let mean = lt / e_lambda;
            let mut scale = DMatrix::zeros(d, d);
            for (draw, &w) in set.draws.iter().zip(&set.weights) {
                let diff = &draw.states[j] - &mean;
                scale += &diff * diff.transpose() * (w * draw.precisions[j]);
            }
            scale /= e_lambda;
            symmetrize(&mut scale);
            let var_est = 1.0 / e_lambda;
            // digamma(n/2) - log(n s / 2) = E[log lambda]
            let dof = solve_dof(e_log + var_est.ln(), init_dof[j])?;
            Ok(NGPosterior {
                mean,
                scale,
                dof,
                var_est,
                layout: layouts[j],
            })
        })
        .collect()
}

/// Temporary discounts for the evolution into `into_time` on a subset of series.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountOverride {
    pub into_time: usize,
    pub series: Vec<usize>,
    pub state: f64,
    pub volatility: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOptions {
    pub marglik: Option<MargLikMethod>,
    /// Keep `F'theta` per draw in the record.
    pub keep_fitted: bool,
    pub keep_samples: bool,
    pub overrides: Vec<DiscountOverride>,
}

impl StepOptions {
    pub fn discounts_into(&self, spec: &ModelSpec, into_time: usize) -> Vec<DiscountSpec> {
        let mut d = spec.discounts();
        for o in self.overrides.iter().filter(|o| o.into_time == into_time) {
            for &j in &o.series {
                d[j] = DiscountSpec {
                    exogenous: o.state,
                    parental: o.state,
                    volatility: o.volatility.unwrap_or(d[j].volatility),
                };
            }
        }
        d
    }
}

/// Filter state: the prior for row `t` and the most recent posterior sample.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub t: usize,
    pub priors: Vec<NGPosterior>,
    /// Decoupled posterior at `t - 1`, from which `priors` were evolved.
    pub posteriors: Option<Vec<NGPosterior>>,
    pub samples: Option<Arc<SampleSet>>,
    pub seed: u64,
}

impl EngineState {
    pub fn initial(spec: &ModelSpec, seed: u64) -> Self {
        Self {
            t: spec.max_lag(),
            priors: spec.priors(),
            posteriors: None,
            samples: None,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    pub time: String,
    pub ess_fraction: f64,
    /// Conditional one-step forecasts given parents.
    pub forecasts: Vec<TForecast>,
    pub posteriors: Vec<NGPosterior>,
    /// Discounts that produced this step's priors; `None` at the first step.
    pub evolved_with: Option<Vec<DiscountSpec>>,
    pub gamma_mean: DMatrix<f64>,
    /// `fitted[j][r] = F_j' theta_j` for draw `r`.
    pub fitted: Option<Vec<Vec<f64>>>,
    pub weights: Option<Vec<f64>>,
    pub marglik: Option<MargLikRecord>,
    pub samples: Option<Arc<SampleSet>>,
}

/// Fitted means `F_j' theta_j` of every draw, using the draw's own
/// observation vector when one is attached.
pub fn fitted_values(spec: &ModelSpec, set: &SampleSet, exogenous: &[DVector<f64>], y: &DVector<f64>) -> Vec<Vec<f64>> {
    (0..spec.q())
        .map(|j| {
            set.draws
                .iter()
                .enumerate()
                .map(|(r, d)| {
                    let obs = set.observations.as_ref().map_or(y, |o| &o[r]);
                    spec.regression_vector(j, &exogenous[j], obs).dot(&d.states[j])
                })
                .collect()
        })
        .collect()
}

/// Decouples a sample and evolves to the prior for the next row.
#[allow(clippy::too_many_arguments)]
pub fn finish_step(
    spec: &ModelSpec,
    state: &EngineState,
    naive: Option<Vec<NGPosterior>>,
    set: SampleSet,
    forecasts: Vec<TForecast>,
    exogenous: &[DVector<f64>],
    y: &DVector<f64>,
    time: String,
    opts: &StepOptions,
    marglik: Option<MargLikRecord>,
) -> Result<(EngineState, StepRecord)> {
    let t = state.t;
    let layouts: Vec<StateLayout> = (0..spec.q()).map(|j| spec.layout(j)).collect();
    let exact = exact_without_weights(spec) && set.observations.is_none();
    let posteriors = match naive {
        Some(naive) if exact => naive,
        naive => {
            let init: Vec<f64> = match &naive {
                Some(n) => n.iter().map(|p| p.dof).collect(),
                None => state.priors.iter().map(|p| p.dof + 1.0).collect(),
            };
            vb_decouple(&set, &layouts, &init)?
        }
    };
    let discounts = opts.discounts_into(spec, t + 1);
    let priors = posteriors
        .iter()
        .enumerate()
        .map(|(j, p)| evolve(p, &spec.evolution_matrix(j), &discounts[j]))
        .collect::<Result<Vec<_>>>()?;
    let evolved_with = (state.samples.is_some() || state.posteriors.is_some())
        .then(|| opts.discounts_into(spec, t));
    let fitted = opts.keep_fitted.then(|| fitted_values(spec, &set, exogenous, y));
    let weights = opts.keep_fitted.then(|| set.weights.clone());
    let gamma_mean = set.weighted_mean_gamma(spec);
    let set = Arc::new(set);
    let record = StepRecord {
        t,
        time,
        ess_fraction: set.ess_fraction,
        forecasts,
        posteriors: posteriors.clone(),
        evolved_with,
        gamma_mean,
        fitted,
        weights,
        marglik,
        samples: opts.keep_samples.then(|| Arc::clone(&set)),
    };
    let next = EngineState {
        t: t + 1,
        priors,
        posteriors: Some(posteriors),
        samples: Some(set),
        seed: state.seed,
    };
    Ok((next, record))
}

/// One forecast-update-evolve cycle on fully observed row `state.t`.
pub fn step(spec: &ModelSpec, data: &Dataset, state: &EngineState, opts: &StepOptions) -> Result<(EngineState, StepRecord)> {
    let t = state.t;
    if t >= data.len() {
        return Err(Error::InvalidArgument(format!("no data row {t}")));
    }
    let y = data.row(t);
    let exogenous = spec.exogenous(data, t)?;
    let marglik = match opts.marglik {
        Some(method) => Some(marglik::estimate(
            spec,
            &state.priors,
            &exogenous,
            &y,
            method,
            spec.samples,
            state.seed,
            t,
        )?),
        None => None,
    };
    let (naive, forecasts) = naive_update(spec, &state.priors, &exogenous, &y)?;
    let set = is_update(spec, &naive, state.seed, t)?;
    finish_step(
        spec,
        state,
        Some(naive),
        set,
        forecasts,
        &exogenous,
        &y,
        data.times[t].clone(),
        opts,
        marglik,
    )
}

/// Filters rows `spec.max_lag()..end` (all remaining rows when `end` is `None`).
pub fn run(spec: &ModelSpec, data: &Dataset, seed: u64, opts: &StepOptions, end: Option<usize>) -> Result<(EngineState, Vec<StepRecord>)> {
    spec.validate()?;
    if data.q() != spec.q() {
        return Err(Error::Dimension(format!(
            "data has {} series, model has {}",
            data.q(),
            spec.q()
        )));
    }
    let end = end.unwrap_or(data.len()).min(data.len());
    let mut state = EngineState::initial(spec, seed);
    let mut records = Vec::with_capacity(end.saturating_sub(state.t));
    while state.t < end {
        let (next, rec) = step(spec, data, &state, opts)?;
        records.push(rec);
        state = next;
    }
    Ok((state, records))
}

/// Joint simulated paths `y_{t+1..t+k}` for each replicate.
#[derive(Debug, Clone)]
pub struct ForecastPaths {
    /// First forecast row index.
    pub start: usize,
    /// `paths[r]` is `k x q`.
    pub paths: Vec<DMatrix<f64>>,
    /// Replicates redrawn because `I - G` was singular.
    pub resampled: usize,
}

impl ForecastPaths {
    pub fn horizon(&self) -> usize {
        self.paths.first().map_or(0, |p| p.nrows())
    }

    pub fn values(&self, h: usize, j: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[(h, j)]).collect()
    }
}

/// Simulation forecast `k` steps ahead of `state`.
///
/// Each replicate resamples a parameter draw by weight, evolves it through
/// the stochastic evolution equations and draws `y` from the implied joint
/// normal. Without a posterior sample the first horizon draws from the
/// current priors.
pub fn forecast_k(
    spec: &ModelSpec,
    data: &Dataset,
    state: &EngineState,
    k: usize,
    replicates: usize,
    opts: &StepOptions,
) -> Result<ForecastPaths> {
    if k == 0 || replicates == 0 {
        return Err(Error::InvalidArgument("horizon and replicate count must be positive".into()));
    }
    let q = spec.q();
    let start = state.t;
    // summaries[h] drives the evolution into start + h
    let base: Vec<NGPosterior> = state.posteriors.clone().unwrap_or_else(|| state.priors.clone());
    let mut summaries = vec![base];
    let mut evolvers: Vec<Vec<EvolutionSampler>> = Vec::with_capacity(k);
    for h in 0..k {
        let d = opts.discounts_into(spec, start + h);
        let current = &summaries[h];
        evolvers.push(
            (0..q)
                .map(|j| EvolutionSampler::new(&current[j], &spec.evolution_matrix(j), &d[j]))
                .collect::<Result<Vec<_>>>()?,
        );
        let next = (0..q)
            .map(|j| evolve(&current[j], &spec.evolution_matrix(j), &d[j]))
            .collect::<Result<Vec<_>>>()?;
        summaries.push(next);
    }
    let prior_samplers = samplers(&state.priors)?;
    let cumulative: Option<Vec<f64>> = state.samples.as_ref().map(|s| {
        let mut acc = 0.0;
        s.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    });

    let results: Vec<Result<(DMatrix<f64>, usize)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(state.seed, &[purpose::FORECAST, start as u64, r as u64]);
            let mut redraws = 0;
            'attempt: loop {
                if redraws > 1000 {
                    return Err(Error::Degenerate("forecast draws keep producing singular I - G".into()));
                }
                let mut draw = match (&state.samples, &cumulative) {
                    (Some(set), Some(cum)) => {
                        let u: f64 = rng.random();
                        let idx = cum.partition_point(|&c| c < u).min(set.len() - 1);
                        let d = &set.draws[idx];
                        let mut states = Vec::with_capacity(q);
                        let mut precisions = Vec::with_capacity(q);
                        for (j, ev) in evolvers[0].iter().enumerate() {
                            let (th, la) = ev.step(&d.states[j], d.precisions[j], &mut rng);
                            states.push(th);
                            precisions.push(la);
                        }
                        Draw { states, precisions }
                    }
                    _ => draw_product(&prior_samplers, &mut rng),
                };
                let mut path = DMatrix::zeros(k, q);
                for (h, step_evolvers) in evolvers.iter().enumerate() {
                    if h > 0 {
                        for (j, ev) in step_evolvers.iter().enumerate() {
                            let (th, la) = ev.step(&draw.states[j], draw.precisions[j], &mut rng);
                            draw.states[j] = th;
                            draw.precisions[j] = la;
                        }
                    }
                    let t = start + h;
                    let exo = (0..q)
                        .map(|j| {
                            spec.exogenous_with(j, t, |s, u| {
                                if u >= start {
                                    path[(u - start, s)]
                                } else {
                                    data.values[(u, s)]
                                }
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let gamma = assemble_gamma(spec, &draw.states);
                    let mu = assemble_mu(spec, &draw.states, &exo);
                    let noise = DVector::from_fn(q, |j, _| {
                        rng.sample::<f64, _>(StandardNormal) / draw.precisions[j].sqrt()
                    });
                    match solve(&identity_minus(&gamma), &(mu + noise)) {
                        Ok(y) => path.row_mut(h).copy_from(&y.transpose()),
                        Err(_) => {
                            redraws += 1;
                            continue 'attempt;
                        }
                    }
                }
                return Ok((path, redraws));
            }
        })
        .collect();
    let mut paths = Vec::with_capacity(replicates);
    let mut resampled = 0;
    for res in results {
        let (p, n) = res?;
        paths.push(p);
        resampled += n;
    }
    Ok(ForecastPaths {
        start,
        paths,
        resampled,
    })
}

/// Per-series summaries of a step, keyed by statistic name.
pub fn posterior_summary(p: &NGPosterior) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for i in 0..p.dim() {
        m.insert(format!("mean[{i}]"), p.mean[i]);
        m.insert(format!("scale[{i}]"), p.scale[(i, i)]);
    }
    m.insert("dof".into(), p.dof);
    m.insert("var_est".into(), p.var_est);
    m
}
