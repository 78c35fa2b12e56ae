//! Counterfactual forecasting after a level shift in one series: the
//! counterfactual model (CFM) conditions on the untreated controls, the
//! outcome-adaptive model (OAM) absorbs the shift, and their difference
//! estimates the effect. A Bayes-factor monitor tracks the evidence for the
//! shift.

mod common;

use std::collections::BTreeSet;

use sgdlm::counterfactual::{cfm_run, effect_summary, intervention_monitor, oam_run, InterventionSpec};
use sgdlm::engine::StepOptions;

fn main() -> sgdlm::Result<()> {
    let start = 50;
    let data = common::data(60, Some((start, 0.6)), 21);
    let spec = common::model(3000, 0.98, 0.99);
    let iv = InterventionSpec {
        start,
        controls: vec![1, 2],
        experimental: vec![0],
        oam_state: 0.3,
        oam_volatility: None,
    };
    let opts = StepOptions {
        keep_fitted: true,
        ..StepOptions::default()
    };

    let (cfm, posts) = cfm_run(&spec, &data, &iv, 4, &opts)?;
    let oam = oam_run(&spec, &data, &iv, 4, &opts)?;
    let effects = effect_summary(&cfm[start - 1..], &oam[start - 1..], &iv.experimental, 4000, 8)?;

    println!("{:>4} {:>9} {:>24} {:>26}", "t", "observed", "counterfactual 5/50/95", "CFM - OAM 5/50/95");
    for (post, eff) in posts.iter().zip(effects.iter().skip(1)) {
        let [lo, mid, hi] = post.quantiles[0];
        println!(
            "{:>4} {:>9.3} {:>8.3}{:>8.3}{:>8.3} {:>+9.3}{:>+9.3}{:>+9.3}",
            post.time,
            data.values[(post.t, 0)],
            lo,
            mid,
            hi,
            eff.lower,
            eff.median,
            eff.upper
        );
    }

    let monitor = intervention_monitor(&spec, &data, &iv, 4, &BTreeSet::new())?;
    println!("\nprobability of a shift from row {start}:");
    for (time, p) in monitor.times.iter().zip(&monitor.probability) {
        println!("  {time:>4} {p:.3}");
    }
    Ok(())
}
