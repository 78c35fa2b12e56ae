//! One-step marginal likelihoods: the two Monte Carlo estimators at a single
//! step, then cumulative log predictive densities over a discount grid.

mod common;

use sgdlm::engine::{run, StepOptions};
use sgdlm::marglik::{discount_grid, estimate, MargLikMethod};

fn main() -> sgdlm::Result<()> {
    let data = common::data(60, None, 5);
    let spec = common::model(1000, 0.98, 0.97);

    let (state, _) = run(&spec, &data, 1, &StepOptions::default(), Some(40))?;
    let exogenous = spec.exogenous(&data, state.t)?;
    let y = data.row(state.t);
    for method in [MargLikMethod::Posterior, MargLikMethod::Prior] {
        let rec = estimate(&spec, &state.priors, &exogenous, &y, method, 1000, 9, state.t)?;
        println!(
            "{:>9}: log p(y) = {:.4}  (MC s.e. {:.4}; log f {:.3}, log g {:.3})",
            method.as_str(),
            rec.log_pred,
            rec.estimator_variance.sqrt(),
            rec.log_f,
            rec.log_g
        );
    }

    let grid: Vec<(f64, f64)> = [0.95, 0.98, 1.0]
        .iter()
        .flat_map(|&s| [0.95, 0.99].map(|v| (s, v)))
        .collect();
    let curves = discount_grid(&spec, &data, &grid, (0.98, 0.99), 2, None)?;
    println!("\n{:>6} {:>10} {:>12} {:>12}", "state", "volatility", "cumulative", "vs baseline");
    for c in &curves {
        println!(
            "{:>6.2} {:>10.2} {:>12.3} {:>+12.3}",
            c.state,
            c.volatility,
            c.cumulative.last().copied().unwrap_or(0.0),
            c.relative.last().copied().unwrap_or(0.0)
        );
    }
    Ok(())
}
