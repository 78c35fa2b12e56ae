#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sgdlm::engine::{ModelSpec, Regressor};
use sgdlm::io::data::Dataset;
use sgdlm::io::simulate::{simulate, TrueParameters};
use sgdlm::structure::GraphStructure;
use sgdlm::udlm::{DiscountSpec, NGPosterior, StateLayout};

/// Three series where `a` and `b` depend on each other and `c` feeds `b`.
pub fn graph() -> GraphStructure {
    GraphStructure::with_labels(
        ["a", "b", "c"].map(String::from).to_vec(),
        vec![vec![1], vec![0, 2], vec![]],
    )
    .unwrap()
}

pub fn prior(layout: StateLayout) -> NGPosterior {
    let mut scale = DMatrix::identity(layout.dim(), layout.dim());
    for i in layout.parental_range() {
        scale[(i, i)] = 0.25;
    }
    NGPosterior::new(DVector::zeros(layout.dim()), scale, 5.0, 0.05, layout).unwrap()
}

pub fn model(samples: usize, state: f64, volatility: f64) -> ModelSpec {
    let discount = DiscountSpec::new(state, state, volatility).unwrap();
    ModelSpec::uniform(graph(), vec![Regressor::Constant], discount, prior, samples).unwrap()
}

/// True parameters: intercept then parental coefficients, per series.
pub fn truth(shift: Option<(usize, f64)>, t: usize) -> TrueParameters {
    let states = vec![
        DVector::from_vec(vec![0.2, 0.3]),
        DVector::from_vec(vec![0.1, -0.25, 0.5]),
        DVector::from_vec(vec![-0.1]),
    ];
    let mut p = TrueParameters::constant(states, DVector::from_vec(vec![60.0, 80.0, 50.0]));
    if let Some((start, size)) = shift {
        if t >= start {
            p.offset = Some(DVector::from_vec(vec![size, 0.0, 0.0]));
        }
    }
    p
}

/// `rows` simulated observations, with an optional level shift in `a`.
pub fn data(rows: usize, shift: Option<(usize, f64)>, seed: u64) -> Dataset {
    let schedule: Vec<_> = (0..rows).map(|t| truth(shift, t)).collect();
    simulate(&model(1, 1.0, 1.0), &schedule, seed).unwrap().data
}
