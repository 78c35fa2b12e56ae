//! Univariate normal-gamma dynamic linear model kernel.
//!
//! A series state `theta` with observation precision `lambda` carries the
//! conjugate summary
//!
//! ```text
//! theta | lambda ~ N(mean, scale / (var_est * lambda))
//! lambda         ~ Gamma(dof / 2, dof * var_est / 2)
//! ```
//!
//! so that `theta` is marginally multivariate T with `dof` degrees of
//! freedom, location `mean` and scale matrix `scale`. The state is split into
//! an exogenous block followed by a parental (contemporaneous) block.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, ln_gamma, symmetrize};
use crate::rng;

/// Block split of a series state: `exogenous` leading entries, then `parental`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub exogenous: usize,
    pub parental: usize,
}

impl StateLayout {
    pub fn new(exogenous: usize, parental: usize) -> Self {
        Self {
            exogenous,
            parental,
        }
    }

    pub fn dim(&self) -> usize {
        self.exogenous + self.parental
    }

    pub fn exogenous_range(&self) -> std::ops::Range<usize> {
        0..self.exogenous
    }

    pub fn parental_range(&self) -> std::ops::Range<usize> {
        self.exogenous..self.dim()
    }

    pub fn parental_indices(&self) -> Vec<usize> {
        self.parental_range().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGPosterior {
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
    /// Point estimate of the observation variance, `1 / E[lambda]`.
    pub var_est: f64,
    pub layout: StateLayout,
}

impl NGPosterior {
    pub fn new(
        mean: DVector<f64>,
        scale: DMatrix<f64>,
        dof: f64,
        var_est: f64,
        layout: StateLayout,
    ) -> Result<Self> {
        let ng = Self {
            mean,
            scale,
            dof,
            var_est,
            layout,
        };
        ng.validate()?;
        Ok(ng)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.scale.nrows() != d || self.scale.ncols() != d || self.layout.dim() != d {
            return Err(Error::Dimension(format!(
                "state of length {d} with {}x{} scale and layout {}+{}",
                self.scale.nrows(),
                self.scale.ncols(),
                self.layout.exogenous,
                self.layout.parental
            )));
        }
        if !(self.dof > 0.0 && self.dof.is_finite()) {
            return Err(Error::InvalidArgument(format!("degrees of freedom {}", self.dof)));
        }
        if !(self.var_est > 0.0 && self.var_est.is_finite()) {
            return Err(Error::InvalidArgument(format!("variance estimate {}", self.var_est)));
        }
        Ok(())
    }

    /// Mean of the precision, `1 / var_est`.
    pub fn precision_mean(&self) -> f64 {
        1.0 / self.var_est
    }
}

/// State and volatility discount factors, each in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSpec {
    pub exogenous: f64,
    pub parental: f64,
    pub volatility: f64,
}

impl DiscountSpec {
    pub fn new(exogenous: f64, parental: f64, volatility: f64) -> Result<Self> {
        let d = Self {
            exogenous,
            parental,
            volatility,
        };
        d.validate()?;
        Ok(d)
    }

    /// No information loss.
    pub fn none() -> Self {
        Self {
            exogenous: 1.0,
            parental: 1.0,
            volatility: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("exogenous", self.exogenous),
            ("parental", self.parental),
            ("volatility", self.volatility),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} discount {v} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Univariate Student-t: location, squared scale `scale_q`, degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TForecast {
    pub location: f64,
    pub scale_q: f64,
    pub dof: f64,
}

impl TForecast {
    pub fn log_pdf(&self, y: f64) -> f64 {
        let n = self.dof;
        let e = y - self.location;
        ln_gamma(0.5 * (n + 1.0)) - ln_gamma(0.5 * n) - 0.5 * (n * PI * self.scale_q).ln()
            - 0.5 * (n + 1.0) * (e * e / (n * self.scale_q)).ln_1p()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        StudentsT::new(self.location, self.scale_q.sqrt(), self.dof)
            .expect("valid Student-t parameters")
            .cdf(y)
    }

    /// Variance, infinite for `dof <= 2`.
    pub fn variance(&self) -> f64 {
        if self.dof > 2.0 {
            self.scale_q * self.dof / (self.dof - 2.0)
        } else {
            f64::INFINITY
        }
    }
}

fn check_regressors(ng: &NGPosterior, regressors: &DVector<f64>) -> Result<()> {
    if regressors.len() != ng.dim() {
        return Err(Error::Dimension(format!(
            "regression vector of length {} for a state of length {}",
            regressors.len(),
            ng.dim()
        )));
    }
    Ok(())
}

/// One-step predictive T for a given regression vector.
pub fn one_step_forecast(ng: &NGPosterior, regressors: &DVector<f64>) -> Result<TForecast> {
    check_regressors(ng, regressors)?;
    let location = regressors.dot(&ng.mean);
    let scale_q = (&ng.scale * regressors).dot(regressors) + ng.var_est;
    Ok(TForecast {
        location,
        scale_q,
        dof: ng.dof,
    })
}

/// Conjugate update on observing `y` with regression vector `regressors`.
pub fn conjugate_update(ng: &NGPosterior, regressors: &DVector<f64>, y: f64) -> Result<NGPosterior> {
    let fc = one_step_forecast(ng, regressors)?;
    let q = fc.scale_q;
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Numerical(format!("forecast scale {q} is not positive")));
    }
    let err = y - fc.location;
    let gain = &ng.scale * regressors / q;
    let z = (ng.dof + err * err / q) / (ng.dof + 1.0);
    let mean = &ng.mean + &gain * err;
    let mut scale = (&ng.scale - &gain * gain.transpose() * q) * z;
    symmetrize(&mut scale);
    Ok(NGPosterior {
        mean,
        scale,
        dof: ng.dof + 1.0,
        var_est: z * ng.var_est,
        layout: ng.layout,
    })
}

/// Block-discount evolution variance from the propagated scale `p`.
pub fn discount_variance(p: &DMatrix<f64>, layout: StateLayout, discount: &DiscountSpec) -> DMatrix<f64> {
    let d = p.nrows();
    let mut w = DMatrix::zeros(d, d);
    for (range, delta) in [
        (layout.exogenous_range(), discount.exogenous),
        (layout.parental_range(), discount.parental),
    ] {
        let factor = (1.0 - delta) / delta;
        for i in range.clone() {
            for j in range.clone() {
                w[(i, j)] = p[(i, j)] * factor;
            }
        }
    }
    w
}

/// Evolution to the next prior: `G` on the state, block discounting on the
/// scale and `volatility` discounting of the degrees of freedom.
pub fn evolve(ng: &NGPosterior, evolution: &DMatrix<f64>, discount: &DiscountSpec) -> Result<NGPosterior> {
    discount.validate()?;
    let d = ng.dim();
    if evolution.nrows() != d || evolution.ncols() != d {
        return Err(Error::Dimension(format!(
            "{}x{} evolution matrix for a state of length {d}",
            evolution.nrows(),
            evolution.ncols()
        )));
    }
    let mean = evolution * &ng.mean;
    let mut p = evolution * &ng.scale * evolution.transpose();
    symmetrize(&mut p);
    let mut scale = &p + discount_variance(&p, ng.layout, discount);
    symmetrize(&mut scale);
    Ok(NGPosterior {
        mean,
        scale,
        dof: discount.volatility * ng.dof,
        var_est: ng.var_est,
        layout: ng.layout,
    })
}

/// Cached sampler for one normal-gamma summary.
#[derive(Debug, Clone)]
pub struct NGSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    shape: f64,
    gamma_scale: f64,
    var_est: f64,
}

impl NGSampler {
    pub fn new(ng: &NGPosterior) -> Result<Self> {
        ng.validate()?;
        Ok(Self {
            mean: ng.mean.clone(),
            factor: cholesky_psd(&ng.scale)?,
            shape: 0.5 * ng.dof,
            gamma_scale: 2.0 / (ng.dof * ng.var_est),
            var_est: ng.var_est,
        })
    }

    pub fn draw_precision<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, self.gamma_scale)
            .expect("positive gamma parameters")
            .sample(rng)
    }

    pub fn draw_state_given<R: Rng + ?Sized>(&self, precision: f64, rng: &mut R) -> DVector<f64> {
        let d = self.mean.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + (&self.factor * z) / (self.var_est * precision).sqrt()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, f64) {
        let lambda = self.draw_precision(rng);
        let theta = self.draw_state_given(lambda, rng);
        (theta, lambda)
    }
}

/// `count` joint draws of `(state, precision)` from a seeded stream.
pub fn sample_ng(ng: &NGPosterior, count: usize, seed: u64) -> Result<Vec<(DVector<f64>, f64)>> {
    let sampler = NGSampler::new(ng)?;
    let mut rng = rng::stream(seed, &[rng::purpose::UPDATE]);
    Ok((0..count).map(|_| sampler.draw(&mut rng)).collect())
}

/// Stochastic evolution of a single parameter draw into the next period.
///
/// The precision receives a beta shock `lambda * eta / beta` with
/// `eta ~ Beta(beta n / 2, (1 - beta) n / 2)`, and the state a normal
/// innovation with variance `W / (var_est * lambda')` where `W` is the
/// block-discount variance of the posterior summary.
#[derive(Debug, Clone)]
pub struct EvolutionSampler {
    evolution: DMatrix<f64>,
    innovation_factor: DMatrix<f64>,
    volatility: f64,
    shock: Option<Beta<f64>>,
    var_est: f64,
}

impl EvolutionSampler {
    pub fn new(posterior: &NGPosterior, evolution: &DMatrix<f64>, discount: &DiscountSpec) -> Result<Self> {
        discount.validate()?;
        let mut p = evolution * &posterior.scale * evolution.transpose();
        symmetrize(&mut p);
        let w = discount_variance(&p, posterior.layout, discount);
        let beta = discount.volatility;
        let shock = if beta < 1.0 {
            Some(
                Beta::new(0.5 * beta * posterior.dof, 0.5 * (1.0 - beta) * posterior.dof)
                    .map_err(|e| Error::Numerical(format!("volatility shock: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            evolution: evolution.clone(),
            innovation_factor: cholesky_psd(&w)?,
            volatility: beta,
            shock,
            var_est: posterior.var_est,
        })
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        theta: &DVector<f64>,
        lambda: f64,
        rng: &mut R,
    ) -> (DVector<f64>, f64) {
        let lambda_next = match &self.shock {
            Some(b) => lambda * b.sample(rng) / self.volatility,
            None => lambda,
        };
        let d = theta.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta_next =
            &self.evolution * theta + (&self.innovation_factor * z) / (self.var_est * lambda_next).sqrt();
        (theta_next, lambda_next)
    }
}

/// Multivariate Student-t with scale matrix `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateT {
    pub location: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl MultivariateT {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.dim() as f64;
        let chol = self
            .scale
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("T scale matrix is not positive definite".into()))?;
        let diff = x - &self.location;
        let sol = chol.l().solve_lower_triangular(&diff).expect("triangular solve");
        let quad = sol.norm_squared();
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let n = self.dof;
        Ok(ln_gamma(0.5 * (n + d)) - ln_gamma(0.5 * n) - 0.5 * d * (n * PI).ln() - 0.5 * log_det
            - 0.5 * (n + d) * (quad / n).ln_1p())
    }

    pub fn sampler(&self) -> Result<MultivariateTSampler> {
        Ok(MultivariateTSampler {
            location: self.location.clone(),
            factor: cholesky_psd(&self.scale)?,
            mixing: Gamma::new(0.5 * self.dof, 2.0 / self.dof)
                .map_err(|e| Error::Numerical(format!("T mixing distribution: {e}")))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MultivariateTSampler {
    location: DVector<f64>,
    factor: DMatrix<f64>,
    mixing: Gamma<f64>,
}

impl MultivariateTSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let w: f64 = self.mixing.sample(rng);
        let d = self.location.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.location + (&self.factor * z) / w.sqrt()
    }
}

/// Marginal T of a sub-vector of the state.
pub fn marginal_t_subvector(ng: &NGPosterior, idx: &[usize]) -> Result<MultivariateT> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= ng.dim()) {
        return Err(Error::InvalidArgument(format!(
            "index {bad} outside a state of length {}",
            ng.dim()
        )));
    }
    Ok(MultivariateT {
        location: ng.mean.select_rows(idx),
        scale: ng.scale.select_rows(idx).select_columns(idx),
        dof: ng.dof,
    })
}
