//! Counterfactual filtering with missing experimental outcomes, the
//! outcome-adaptive comparison run and causal effect summaries.
//!
//! After the intervention only control series are treated as observed. The
//! missing experimental values are drawn from the normal mixture implied by
//! a prior parameter ensemble, each draw completes the data vector, and the
//! completed vector is filtered as usual.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    self, assemble_gamma, assemble_mu, draw_product, finalize_weights, finish_step, joint_moments,
    log_det_weights, samplers, Draw, EngineState, JointMoments, ModelSpec, Regressor, SampleSet,
    StepOptions, StepRecord, DiscountOverride,
};
use crate::error::{Error, Result};
use crate::io::data::Dataset;
use crate::linalg::{normalize_log_weights, symmetrize, weighted_quantiles};
use crate::marglik::{self, MargLikMethod, MonitorTrajectory};
use crate::rng::{self, purpose};
use crate::udlm::{conjugate_update, one_step_forecast, NGSampler};

/// Intervention timing and series roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    /// Row index of the first affected observation.
    pub start: usize,
    pub controls: Vec<usize>,
    pub experimental: Vec<usize>,
    /// Temporary state discount on the evolution into `start`.
    pub oam_state: f64,
    /// Temporary volatility discount; the baseline when absent.
    pub oam_volatility: Option<f64>,
}

impl InterventionSpec {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let q = spec.q();
        let mut seen = vec![false; q];
        for &i in self.controls.iter().chain(&self.experimental) {
            if i >= q || seen[i] {
                return Err(Error::Config(format!(
                    "controls and experimental series must partition 0..{q}"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("some series are neither control nor experimental".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::Config("at least one control series is required".into()));
        }
        if !(self.oam_state > 0.0 && self.oam_state <= 1.0) {
            return Err(Error::Config(format!("OAM state discount {}", self.oam_state)));
        }
        if let Some(b) = self.oam_volatility {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config(format!("OAM volatility discount {b}")));
            }
        }
        let experimental: BTreeSet<usize> = self.experimental.iter().copied().collect();
        for (j, s) in spec.series.iter().enumerate() {
            for r in &s.regressors {
                if let Regressor::Lag { series, .. } = r {
                    if experimental.contains(series) {
                        return Err(Error::Config(format!(
                            "series {j} uses a lag of experimental series {series}; \
                             lagged regressors must be controls"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn oam_override(&self) -> DiscountOverride {
        DiscountOverride {
            into_time: self.start,
            series: self.experimental.clone(),
            state: self.oam_state,
            volatility: self.oam_volatility,
        }
    }
}

/// Partitioned pieces of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub alpha_c: DVector<f64>,
    pub alpha_e: DVector<f64>,
    /// Inverse of the lower Cholesky factor of the experimental precision block.
    pub b: DMatrix<f64>,
    /// Control-experimental precision block times `b'`.
    pub fmat: DMatrix<f64>,
    /// Precision of the control margin.
    pub control_precision: DMatrix<f64>,
}

impl MixtureComponent {
    pub fn new(jm: &JointMoments, iv: &InterventionSpec) -> Result<Self> {
        let (c, e) = (&iv.controls, &iv.experimental);
        let omega_c = jm.omega.select_rows(c).select_columns(c);
        let omega_ce = jm.omega.select_rows(c).select_columns(e);
        let omega_e = jm.omega.select_rows(e).select_columns(e);
        let qe = e.len();
        let b = if qe == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let l = omega_e
                .cholesky()
                .ok_or_else(|| Error::Numerical("experimental precision block is not positive definite".into()))?
                .l();
            l.solve_lower_triangular(&DMatrix::identity(qe, qe))
                .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?
        };
        let fmat = &omega_ce * b.transpose();
        let mut control_precision = omega_c - &fmat * fmat.transpose();
        symmetrize(&mut control_precision);
        Ok(Self {
            alpha_c: jm.alpha.select_rows(c),
            alpha_e: jm.alpha.select_rows(e),
            b,
            fmat,
            control_precision,
        })
    }

    /// `log p(y_c)` up to the constant shared by all components.
    pub fn control_log_pdf(&self, y_c: &DVector<f64>) -> Result<f64> {
        let chol = self
            .control_precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("control precision is not positive definite".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let diff = y_c - &self.alpha_c;
        let quad = (chol.l().transpose() * &diff).norm_squared();
        Ok(0.5 * log_det - 0.5 * quad)
    }

    pub fn conditional_mean(&self, y_c: &DVector<f64>) -> DVector<f64> {
        &self.alpha_e - self.b.transpose() * (self.fmat.transpose() * (y_c - &self.alpha_c))
    }

    /// `b' b`, the conditional covariance of the experimental block.
    pub fn conditional_covariance(&self) -> DMatrix<f64> {
        self.b.transpose() * &self.b
    }

    /// `alpha_e - b'(F'(y_c - alpha_c) + z)`.
    pub fn draw_with(&self, y_c: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.alpha_e - self.b.transpose() * (self.fmat.transpose() * (y_c - &self.alpha_c) + z)
    }
}

/// `log p(y_c | parameters)` for one parameter draw.
pub fn control_marginal_logpdf(jm: &JointMoments, iv: &InterventionSpec, y_c: &DVector<f64>) -> Result<f64> {
    MixtureComponent::new(jm, iv)?.control_log_pdf(y_c)
}

/// Softmax of component log-densities.
pub fn mixture_weights(log_pdfs: &[f64]) -> Result<Vec<f64>> {
    normalize_log_weights(log_pdfs)
        .ok_or_else(|| Error::Degenerate("every mixture component has zero density".into()))
}

/// Mixture over a parameter ensemble, conditioned on control values.
#[derive(Debug, Clone)]
pub struct MixtureConditional {
    pub components: Vec<Option<MixtureComponent>>,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MixtureConditional {
    /// Components with singular `I - G` or invalid blocks get zero weight.
    pub fn build(spec: &ModelSpec, ensemble: &[Draw], exogenous: &[DVector<f64>], iv: &InterventionSpec, y_c: &DVector<f64>) -> Result<Self> {
        let pieces: Vec<(Option<MixtureComponent>, f64)> = ensemble
            .par_iter()
            .map(|d| {
                let gamma = assemble_gamma(spec, &d.states);
                let mu = assemble_mu(spec, &d.states, exogenous);
                let lam = DVector::from_vec(d.precisions.clone());
                let comp = joint_moments(&gamma, &mu, &lam).and_then(|jm| MixtureComponent::new(&jm, iv));
                match comp {
                    Ok(c) => match c.control_log_pdf(y_c) {
                        Ok(l) => (Some(c), l),
                        Err(_) => (None, f64::NEG_INFINITY),
                    },
                    Err(_) => (None, f64::NEG_INFINITY),
                }
            })
            .collect();
        let (components, log_weights): (Vec<_>, Vec<_>) = pieces.into_iter().unzip();
        let weights = mixture_weights(&log_weights)?;
        Ok(Self {
            components,
            log_weights,
            weights,
        })
    }

    /// Exact mean and covariance of the mixture.
    pub fn moments(&self, y_c: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let qe = self
            .components
            .iter()
            .flatten()
            .next()
            .map_or(0, |c| c.alpha_e.len());
        let mut mean = DVector::zeros(qe);
        let mut second = DMatrix::zeros(qe, qe);
        for (c, &w) in self.components.iter().zip(&self.weights) {
            if let (Some(c), true) = (c, w > 0.0) {
                let m = c.conditional_mean(y_c);
                second += (c.conditional_covariance() + &m * m.transpose()) * w;
                mean += m * w;
            }
        }
        let mut cov = second - &mean * mean.transpose();
        symmetrize(&mut cov);
        (mean, cov)
    }
}

/// Multinomial component selection then conditional normal draws.
/// Returns `(component, y_e)` pairs.
pub fn sample_missing(
    mixture: &MixtureConditional,
    y_c: &DVector<f64>,
    count: usize,
    seed: u64,
    t: usize,
) -> Vec<(usize, DVector<f64>)> {
    let mut acc = 0.0;
    let cumulative: Vec<f64> = mixture
        .weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    let mut rng = rng::stream(seed, &[purpose::MIXTURE, t as u64]);
    let picks: Vec<usize> = (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
        })
        .collect();
    picks
        .into_par_iter()
        .enumerate()
        .map(|(k, r)| {
            let comp = mixture.components[r].as_ref().expect("selected components have positive weight");
            let mut rng = rng::stream(seed, &[purpose::COMPLETE, t as u64, k as u64]);
            let z = DVector::from_fn(comp.alpha_e.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            (r, comp.draw_with(y_c, &z))
        })
        .collect()
}

/// Counterfactual posterior of the experimental series at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPosterior {
    pub t: usize,
    pub time: String,
    pub series: Vec<usize>,
    pub draws: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    /// Per experimental series: (5%, 50%, 95%).
    pub quantiles: Vec<[f64; 3]>,
    /// Exact moments of the proposal mixture.
    pub mixture_mean: DVector<f64>,
    pub mixture_covariance: DMatrix<f64>,
}

impl CounterfactualPosterior {
    pub fn values(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }
}

fn control_values(iv: &InterventionSpec, y: &DVector<f64>) -> DVector<f64> {
    y.select_rows(&iv.controls)
}

/// Counterfactual step with an explicit prior parameter ensemble.
pub fn cfm_step_with_ensemble(
    spec: &ModelSpec,
    data: &Dataset,
    state: &EngineState,
    iv: &InterventionSpec,
    ensemble: &[Draw],
    opts: &StepOptions,
) -> Result<(EngineState, CounterfactualPosterior, StepRecord)> {
    let t = state.t;
    if t < iv.start {
        return Err(Error::InvalidArgument(format!(
            "counterfactual step at row {t} precedes the intervention at {}",
            iv.start
        )));
    }
    let q = spec.q();
    let y_obs = data.row(t);
    let y_c = control_values(iv, &y_obs);
    let exogenous = spec.exogenous(data, t)?;
    let mixture = MixtureConditional::build(spec, ensemble, &exogenous, iv, &y_c)?;
    let (mixture_mean, mixture_covariance) = mixture.moments(&y_c);
    let missing = sample_missing(&mixture, &y_c, spec.samples, state.seed, t);

    let completed: Vec<DVector<f64>> = missing
        .iter()
        .map(|(_, y_e)| {
            let mut y = DVector::zeros(q);
            for (k, &i) in iv.controls.iter().enumerate() {
                y[i] = y_c[k];
            }
            for (k, &i) in iv.experimental.iter().enumerate() {
                y[i] = y_e[k];
            }
            y
        })
        .collect();

    let draws: Vec<Draw> = completed
        .par_iter()
        .enumerate()
        .map(|(r, y)| {
            let mut rng = rng::stream(state.seed, &[purpose::UPDATE, t as u64, r as u64]);
            let mut states = Vec::with_capacity(q);
            let mut precisions = Vec::with_capacity(q);
            for j in 0..q {
                let f = spec.regression_vector(j, &exogenous[j], y);
                let post = conjugate_update(&state.priors[j], &f, y[j])?;
                let (th, la) = NGSampler::new(&post)?.draw(&mut rng);
                states.push(th);
                precisions.push(la);
            }
            Ok(Draw { states, precisions })
        })
        .collect::<Result<Vec<_>>>()?;
    let log_w = log_det_weights(spec, &draws);
    let (weights, ess) = finalize_weights(&log_w)?;

    let mut y_mean = DVector::zeros(q);
    for (y, &w) in completed.iter().zip(&weights) {
        y_mean += y * w;
    }
    let forecasts = (0..q)
        .map(|j| one_step_forecast(&state.priors[j], &spec.regression_vector(j, &exogenous[j], &y_mean)))
        .collect::<Result<Vec<_>>>()?;

    let y_e_draws: Vec<DVector<f64>> = missing.into_iter().map(|(_, y_e)| y_e).collect();
    let quantiles = (0..iv.experimental.len())
        .map(|k| {
            let v: Vec<f64> = y_e_draws.iter().map(|d| d[k]).collect();
            let qs = weighted_quantiles(&v, &weights, &[0.05, 0.5, 0.95]);
            [qs[0], qs[1], qs[2]]
        })
        .collect();
    let set = SampleSet {
        draws,
        weights: weights.clone(),
        ess_fraction: ess,
        observations: Some(completed),
    };
    let (next, record) = finish_step(
        spec,
        state,
        None,
        set,
        forecasts,
        &exogenous,
        &y_mean,
        data.times[t].clone(),
        opts,
        None,
    )?;
    let posterior = CounterfactualPosterior {
        t,
        time: data.times[t].clone(),
        series: iv.experimental.clone(),
        draws: y_e_draws,
        weights,
        quantiles,
        mixture_mean,
        mixture_covariance,
    };
    Ok((next, posterior, record))
}

/// Counterfactual step drawing a fresh ensemble from the current priors.
pub fn cfm_step(
    spec: &ModelSpec,
    data: &Dataset,
    state: &EngineState,
    iv: &InterventionSpec,
    opts: &StepOptions,
) -> Result<(EngineState, CounterfactualPosterior, StepRecord)> {
    let ss = samplers(&state.priors)?;
    let t = state.t;
    let ensemble: Vec<Draw> = (0..spec.samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(state.seed, &[purpose::ENSEMBLE, t as u64, r as u64]);
            draw_product(&ss, &mut rng)
        })
        .collect();
    cfm_step_with_ensemble(spec, data, state, iv, &ensemble, opts)
}

/// Full counterfactual history: ordinary filtering before the intervention,
/// counterfactual steps from it onward.
pub fn cfm_run(
    spec: &ModelSpec,
    data: &Dataset,
    iv: &InterventionSpec,
    seed: u64,
    opts: &StepOptions,
) -> Result<(Vec<StepRecord>, Vec<CounterfactualPosterior>)> {
    iv.validate(spec)?;
    let (mut state, mut records) = engine::run(spec, data, seed, opts, Some(iv.start))?;
    let mut posts = Vec::new();
    while state.t < data.len() {
        let (next, post, rec) = cfm_step(spec, data, &state, iv, opts)?;
        records.push(rec);
        posts.push(post);
        state = next;
    }
    Ok((records, posts))
}

/// Full-data run with temporarily reduced discounts on experimental series.
pub fn oam_run(
    spec: &ModelSpec,
    data: &Dataset,
    iv: &InterventionSpec,
    seed: u64,
    opts: &StepOptions,
) -> Result<Vec<StepRecord>> {
    iv.validate(spec)?;
    let mut opts = opts.clone();
    opts.overrides.push(iv.oam_override());
    Ok(engine::run(spec, data, seed, &opts, None)?.1)
}

/// Median and central 90% interval of a causal effect.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSummary {
    pub t: usize,
    pub time: String,
    pub series: usize,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Distribution of `F'theta` under the counterfactual run minus the same
/// under the adaptive run. Both weighted ensembles are resampled with common
/// uniforms so identical histories give an exact zero.
pub fn effect_summary(
    cfm: &[StepRecord],
    oam: &[StepRecord],
    series: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<EffectSummary>> {
    if cfm.len() != oam.len() {
        return Err(Error::Misaligned(format!("{} vs {} records", cfm.len(), oam.len())));
    }
    let mut out = Vec::new();
    for (a, b) in cfm.iter().zip(oam) {
        if a.t != b.t {
            return Err(Error::Misaligned(format!("row {} against {}", a.t, b.t)));
        }
        let (fa, wa) = fitted_of(a)?;
        let (fb, wb) = fitted_of(b)?;
        let ca = cumulative(wa);
        let cb = cumulative(wb);
        let mut rng = rng::stream(seed, &[purpose::SUMMARY, a.t as u64]);
        let picks: Vec<(usize, usize)> = (0..draws)
            .map(|_| {
                let u: f64 = rng.random();
                (pick(&ca, u), pick(&cb, u))
            })
            .collect();
        for &j in series {
            let delta: Vec<f64> = picks.iter().map(|&(i, k)| fa[j][i] - fb[j][k]).collect();
            let w = vec![1.0; delta.len()];
            let qs = weighted_quantiles(&delta, &w, &[0.05, 0.5, 0.95]);
            out.push(EffectSummary {
                t: a.t,
                time: a.time.clone(),
                series: j,
                lower: qs[0],
                median: qs[1],
                upper: qs[2],
            });
        }
    }
    Ok(out)
}

fn fitted_of(r: &StepRecord) -> Result<(&Vec<Vec<f64>>, &Vec<f64>)> {
    match (&r.fitted, &r.weights) {
        (Some(f), Some(w)) => Ok((f, w)),
        _ => Err(Error::InvalidArgument(
            "effect summaries need records filtered with fitted values kept".into(),
        )),
    }
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    let total = *cum.last().expect("non-empty weights");
    cum.partition_point(|&c| c <= u * total).min(cum.len() - 1)
}

/// Marginal-likelihood monitor of the adaptive model against the baseline,
/// both on full data, from equal odds just before the intervention.
pub fn intervention_monitor(
    spec: &ModelSpec,
    data: &Dataset,
    iv: &InterventionSpec,
    seed: u64,
    excluded: &BTreeSet<String>,
) -> Result<MonitorTrajectory> {
    iv.validate(spec)?;
    let base = StepOptions {
        marglik: Some(MargLikMethod::Posterior),
        ..StepOptions::default()
    };
    let mut adaptive = base.clone();
    adaptive.overrides.push(iv.oam_override());
    let (_, a) = engine::run(spec, data, seed, &adaptive, None)?;
    let (_, b) = engine::run(spec, data, seed, &base, None)?;
    let series = |recs: &[StepRecord]| -> Vec<(String, f64)> {
        recs.iter()
            .filter(|r| r.t >= iv.start)
            .map(|r| (r.time.clone(), r.marglik.as_ref().expect("requested").log_pred))
            .collect()
    };
    marglik::monitor(&series(&a), &series(&b), excluded)
}

/// Level-scale counterfactual paths from log-return draws: each path
/// cumulates one weighted resample per time starting from `anchor`.
/// Returns per time and experimental series the (5%, 50%, 95%) levels.
pub fn level_quantiles(anchor: &[f64], posts: &[CounterfactualPosterior], paths: usize, seed: u64) -> Vec<Vec<[f64; 3]>> {
    let qe = anchor.len();
    let mut logs = vec![vec![0.0; paths]; qe];
    let mut out = Vec::with_capacity(posts.len());
    for p in posts {
        let cum = cumulative(&p.weights);
        let mut rng = rng::stream(seed, &[purpose::SUMMARY, p.t as u64, 1]);
        for path in 0..paths {
            let i = pick(&cum, rng.random());
            for (k, log) in logs.iter_mut().enumerate() {
                log[path] += p.draws[i][k];
            }
        }
        let ones = vec![1.0; paths];
        out.push(
            (0..qe)
                .map(|k| {
                    let lv: Vec<f64> = logs[k].iter().map(|l| anchor[k] * l.exp()).collect();
                    let qs = weighted_quantiles(&lv, &ones, &[0.05, 0.5, 0.95]);
                    [qs[0], qs[1], qs[2]]
                })
                .collect(),
        );
    }
    out
}
