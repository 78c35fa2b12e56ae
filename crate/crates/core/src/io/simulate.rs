//! Synthetic data from known parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::engine::{assemble_gamma, assemble_mu, joint_moments, ModelSpec};
use crate::error::{Error, Result};
use crate::io::data::Dataset;
use crate::rng::{self, purpose};
use crate::structure::spectral_radius;

/// True parameters at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameters {
    /// Per-series state vectors laid out as in the model spec.
    pub states: Vec<DVector<f64>>,
    pub precisions: DVector<f64>,
    /// Added to the exogenous means before solving for `alpha`.
    pub offset: Option<DVector<f64>>,
}

impl TrueParameters {
    pub fn constant(states: Vec<DVector<f64>>, precisions: DVector<f64>) -> Self {
        Self {
            states,
            precisions,
            offset: None,
        }
    }
}

/// What generated each simulated row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub alpha: Vec<DVector<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub omega: Vec<DMatrix<f64>>,
    pub spectral_radius: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: Dataset,
    pub truth: GroundTruth,
}

/// Draws `y_t ~ N(alpha_t, Omega_t^{-1})` for each entry of `schedule`.
/// Lagged regressors reaching before the first row read zero.
pub fn simulate(spec: &ModelSpec, schedule: &[TrueParameters], seed: u64) -> Result<Simulation> {
    spec.validate()?;
    let q = spec.q();
    let n = schedule.len();
    let mut values = DMatrix::zeros(n, q);
    let mut truth = GroundTruth {
        alpha: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        omega: Vec::with_capacity(n),
        spectral_radius: Vec::with_capacity(n),
    };
    let pad = spec.max_lag();
    for (t, p) in schedule.iter().enumerate() {
        if p.states.len() != q || p.precisions.len() != q {
            return Err(Error::Dimension(format!("true parameters at row {t} are not for {q} series")));
        }
        for j in 0..q {
            if p.states[j].len() != spec.layout(j).dim() {
                return Err(Error::Dimension(format!(
                    "row {t}, series {j}: state length {} for layout {:?}",
                    p.states[j].len(),
                    spec.layout(j)
                )));
            }
        }
        let gamma = assemble_gamma(spec, &p.states);
        let rho = spectral_radius(&gamma);
        if rho.is_nan() || rho >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "row {t}: spectral radius {rho} of the true coefficient matrix is not below 1"
            )));
        }
        let exogenous = (0..q)
            .map(|j| {
                spec.exogenous_with(j, t + pad, |s, u| {
                    if u < pad {
                        0.0
                    } else {
                        values[(u - pad, s)]
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mu = assemble_mu(spec, &p.states, &exogenous);
        if let Some(o) = &p.offset {
            mu += o;
        }
        let jm = joint_moments(&gamma, &mu, &p.precisions)?;
        // y = alpha + (I - G)^{-1} Lambda^{-1/2} z
        let mut rng = rng::stream(seed, &[purpose::SIMULATE, t as u64]);
        let z = DVector::from_fn(q, |j, _| rng.sample::<f64, _>(StandardNormal) / p.precisions[j].sqrt());
        let a = crate::linalg::identity_minus(&gamma);
        let y = &jm.alpha + crate::linalg::solve(&a, &z)?;
        values.row_mut(t).copy_from(&y.transpose());
        truth.alpha.push(jm.alpha);
        truth.gamma.push(gamma);
        truth.omega.push(jm.omega);
        truth.spectral_radius.push(rho);
    }
    let data = Dataset::new(
        spec.graph.labels().to_vec(),
        (0..n).map(|t| t.to_string()).collect(),
        values,
    )?;
    Ok(Simulation { data, truth })
}
