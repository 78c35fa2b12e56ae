//! Simulates a cyclic three-series system and checks the sample covariance
//! against the inverse of the implied joint precision.

mod common;

use sgdlm::io::data::write_csv;
use sgdlm::io::simulate::simulate;

fn main() -> sgdlm::Result<()> {
    let rows = 5000;
    let schedule: Vec<_> = (0..rows).map(|t| common::truth(None, t)).collect();
    let sim = simulate(&common::model(1, 1.0, 1.0), &schedule, 7)?;

    let alpha = &sim.truth.alpha[0];
    let cov = sim.truth.omega[0].clone().try_inverse().expect("precision is invertible");
    println!("spectral radius of the coefficient matrix: {:.3}", sim.truth.spectral_radius[0]);
    println!("{:>6} {:>10} {:>10} {:>12} {:>12}", "series", "mean", "alpha", "variance", "implied");
    for (j, label) in sim.data.labels.iter().enumerate() {
        let col = sim.data.values.column(j);
        let mean = col.mean();
        let var = col.map(|v| (v - mean).powi(2)).sum() / (rows - 1) as f64;
        println!("{label:>6} {mean:>10.4} {:>10.4} {var:>12.5} {:>12.5}", alpha[j], cov[(j, j)]);
    }

    let path = std::env::temp_dir().join("sgdlm_simulated.csv");
    write_csv(&sim.data, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
