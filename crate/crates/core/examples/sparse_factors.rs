//! Sparse dynamic factors implied by the filtered coefficient matrix. Each
//! factor combines the members of one common parental set and loads only on
//! that set's children.

mod common;

use sgdlm::engine::{run, StepOptions};
use sgdlm::factors::{canonicalize, factor_series, reference_pattern, svd_factorize, FactorInput};
use sgdlm::structure::{common_parental_sets, structural_rank};

fn fmt<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" ")
}

fn main() -> sgdlm::Result<()> {
    let data = common::data(400, None, 13);
    let spec = common::model(1000, 0.98, 0.99);
    let opts = StepOptions {
        keep_samples: true,
        ..StepOptions::default()
    };
    let (_, records) = run(&spec, &data, 6, &opts, None)?;

    let part = common_parental_sets(&spec.graph);
    let last = records.last().expect("at least one filtered row");
    let rank = structural_rank(&part, Some(&last.gamma_mean));
    let reference = reference_pattern(&part, spec.q(), None, Some(&rank.per_set));
    let dec = canonicalize(&svd_factorize(&last.gamma_mean, &part)?, &reference)?;

    println!("coefficient matrix at {}:", last.time);
    for row in last.gamma_mean.row_iter() {
        println!("  {}", fmt(row.iter()));
    }
    for k in 0..dec.p() {
        println!(
            "factor {k}: singular value {:.3}, scores [{}], loadings [{}]",
            dec.singular_values[k],
            fmt(dec.scores.row(k).iter()),
            fmt(dec.loadings.column(k).iter())
        );
    }
    println!("reconstruction error {:.2e}", (dec.reconstruct() - &last.gamma_mean).amax());

    let inputs: Vec<FactorInput<'_>> = records
        .iter()
        .skip(records.len() - 5)
        .map(|r| FactorInput {
            time: r.time.clone(),
            gamma: r.gamma_mean.clone(),
            y: data.row(r.t),
            samples: r.samples.as_deref().map(|s| (&spec, s)),
        })
        .collect();
    let series = factor_series(&inputs, &part, &reference)?;
    let bands = series.bands.as_ref();
    println!("\n{:>4} {:>9} {:>22}", "t", "factor 0", "5/50/95 over draws");
    for (i, time) in series.times.iter().enumerate() {
        let [lo, mid, hi] = bands.map_or([f64::NAN; 3], |b| b[i][0]);
        println!("{time:>4} {:>+9.4} {lo:>+7.3}{mid:>+7.3}{hi:>+7.3}", series.factors[i][0]);
    }
    Ok(())
}
