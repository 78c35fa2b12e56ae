//! Sequential filtering of a cyclic system followed by a joint simulation
//! forecast four steps ahead.

mod common;

use sgdlm::engine::{forecast_k, run, StepOptions};
use sgdlm::linalg::weighted_quantiles;

fn main() -> sgdlm::Result<()> {
    let data = common::data(80, None, 11);
    let spec = common::model(2000, 0.98, 0.97);
    let (state, records) = run(&spec, &data, 3, &StepOptions::default(), None)?;

    println!("{:>4} {:>6}  coefficient posterior means", "t", "ESS");
    for rec in records.iter().step_by(10) {
        let b = &rec.posteriors[1];
        println!(
            "{:>4} {:>6.3}  a<-b {:+.3}  b<-a {:+.3}  b<-c {:+.3}",
            rec.time, rec.ess_fraction, rec.posteriors[0].mean[1], b.mean[1], b.mean[2]
        );
    }
    let worst = records.iter().map(|r| r.ess_fraction).fold(1.0, f64::min);
    println!("smallest ESS fraction: {worst:.3}");

    let paths = forecast_k(&spec, &data, &state, 4, 4000, &StepOptions::default())?;
    println!("\n{:>3} {:>6} {:>9} {:>9} {:>9}", "h", "series", "q05", "median", "q95");
    for h in 0..paths.horizon() {
        for (j, label) in data.labels.iter().enumerate() {
            let v = paths.values(h, j);
            let q = weighted_quantiles(&v, &vec![1.0; v.len()], &[0.05, 0.5, 0.95]);
            println!("{:>3} {label:>6} {:>9.4} {:>9.4} {:>9.4}", h + 1, q[0], q[1], q[2]);
        }
    }
    Ok(())
}
