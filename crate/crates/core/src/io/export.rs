//! Flat result tables and the run manifest.
//!
//! Every table has the columns `t,time,kind,label,stat,value`. Values are
//! written with 17 significant digits so re-reading is bit-exact.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{ForecastPaths, StepRecord};
use crate::error::{Error, Result};
use crate::factors::FactorSeries;
use crate::io::config::RunConfig;
use crate::linalg::weighted_quantiles;
use crate::marglik::{GridCurve, MonitorTrajectory};
use crate::counterfactual::{CounterfactualPosterior, EffectSummary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Forecast,
    Posterior,
    Counterfactual,
    Marglik,
    Factor,
    Monitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecordRow {
    pub t: usize,
    pub time: String,
    pub kind: RowKind,
    pub label: String,
    pub stat: String,
    pub value: f64,
}

impl StepRecordRow {
    pub fn new(t: usize, time: &str, kind: RowKind, label: impl Into<String>, stat: impl Into<String>, value: f64) -> Self {
        Self {
            t,
            time: time.to_string(),
            kind,
            label: label.into(),
            stat: stat.into(),
            value,
        }
    }
}

fn kind_str(k: RowKind) -> &'static str {
    match k {
        RowKind::Forecast => "forecast",
        RowKind::Posterior => "posterior",
        RowKind::Counterfactual => "counterfactual",
        RowKind::Marglik => "marglik",
        RowKind::Factor => "factor",
        RowKind::Monitor => "monitor",
    }
}

pub fn write_rows(path: &Path, rows: &[StepRecordRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "time", "kind", "label", "stat", "value"])?;
    for r in rows {
        w.write_record([
            r.t.to_string().as_str(),
            &r.time,
            kind_str(r.kind),
            &r.label,
            &r.stat,
            &format!("{:.16e}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<StepRecordRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Forecast, posterior and marginal-likelihood rows of a filter run.
pub fn record_rows(labels: &[String], records: &[StepRecord]) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for r in records {
        let (t, time) = (r.t, r.time.as_str());
        rows.push(StepRecordRow::new(t, time, RowKind::Posterior, "all", "ess_fraction", r.ess_fraction));
        for (j, f) in r.forecasts.iter().enumerate() {
            let l = &labels[j];
            rows.push(StepRecordRow::new(t, time, RowKind::Forecast, l, "location", f.location));
            rows.push(StepRecordRow::new(t, time, RowKind::Forecast, l, "scale", f.scale_q));
            rows.push(StepRecordRow::new(t, time, RowKind::Forecast, l, "dof", f.dof));
        }
        for (j, p) in r.posteriors.iter().enumerate() {
            let l = &labels[j];
            for i in 0..p.dim() {
                rows.push(StepRecordRow::new(t, time, RowKind::Posterior, l, format!("mean[{i}]"), p.mean[i]));
                rows.push(StepRecordRow::new(t, time, RowKind::Posterior, l, format!("scale[{i}]"), p.scale[(i, i)]));
            }
            rows.push(StepRecordRow::new(t, time, RowKind::Posterior, l, "dof", p.dof));
            rows.push(StepRecordRow::new(t, time, RowKind::Posterior, l, "var_est", p.var_est));
        }
        let g = &r.gamma_mean;
        for j in 0..g.nrows() {
            for h in 0..g.ncols() {
                if g[(j, h)] != 0.0 {
                    rows.push(StepRecordRow::new(
                        t,
                        time,
                        RowKind::Posterior,
                        format!("{}<-{}", labels[j], labels[h]),
                        "gamma_mean",
                        g[(j, h)],
                    ));
                }
            }
        }
        if let Some(m) = &r.marglik {
            rows.push(StepRecordRow::new(t, time, RowKind::Marglik, "all", "log_f", m.log_f));
            rows.push(StepRecordRow::new(t, time, RowKind::Marglik, "all", "log_g", m.log_g));
            rows.push(StepRecordRow::new(t, time, RowKind::Marglik, "all", "log_pred", m.log_pred));
            rows.push(StepRecordRow::new(t, time, RowKind::Marglik, "all", "estimator_variance", m.estimator_variance));
        }
    }
    rows
}

/// Per-horizon quantiles and means of simulated paths.
pub fn forecast_rows(labels: &[String], times: &[String], paths: &ForecastPaths) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for h in 0..paths.horizon() {
        let t = paths.start + h;
        let time = times.get(t).cloned().unwrap_or_else(|| format!("+{}", h + 1));
        for (j, l) in labels.iter().enumerate() {
            let v = paths.values(h, j);
            let ones = vec![1.0; v.len()];
            let qs = weighted_quantiles(&v, &ones, &[0.05, 0.5, 0.95]);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            rows.push(StepRecordRow::new(t, &time, RowKind::Forecast, l, "q05", qs[0]));
            rows.push(StepRecordRow::new(t, &time, RowKind::Forecast, l, "median", qs[1]));
            rows.push(StepRecordRow::new(t, &time, RowKind::Forecast, l, "q95", qs[2]));
            rows.push(StepRecordRow::new(t, &time, RowKind::Forecast, l, "mean", mean));
        }
    }
    rows
}

/// Counterfactual quantiles, mixture moments and the observed outcome.
pub fn counterfactual_rows(labels: &[String], posts: &[CounterfactualPosterior], observed: &nalgebra::DMatrix<f64>) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for p in posts {
        for (k, &j) in p.series.iter().enumerate() {
            let l = &labels[j];
            let (t, time) = (p.t, p.time.as_str());
            let [lo, med, hi] = p.quantiles[k];
            rows.push(StepRecordRow::new(t, time, RowKind::Counterfactual, l, "q05", lo));
            rows.push(StepRecordRow::new(t, time, RowKind::Counterfactual, l, "median", med));
            rows.push(StepRecordRow::new(t, time, RowKind::Counterfactual, l, "q95", hi));
            rows.push(StepRecordRow::new(t, time, RowKind::Counterfactual, l, "mixture_mean", p.mixture_mean[k]));
            rows.push(StepRecordRow::new(t, time, RowKind::Counterfactual, l, "mixture_sd", p.mixture_covariance[(k, k)].sqrt()));
            rows.push(StepRecordRow::new(t, time, RowKind::Counterfactual, l, "observed", observed[(t, j)]));
        }
    }
    rows
}

pub fn effect_rows(labels: &[String], effects: &[EffectSummary]) -> Vec<StepRecordRow> {
    effects
        .iter()
        .flat_map(|e| {
            let l = &labels[e.series];
            [
                StepRecordRow::new(e.t, &e.time, RowKind::Counterfactual, l, "effect_q05", e.lower),
                StepRecordRow::new(e.t, &e.time, RowKind::Counterfactual, l, "effect_median", e.median),
                StepRecordRow::new(e.t, &e.time, RowKind::Counterfactual, l, "effect_q95", e.upper),
            ]
        })
        .collect()
}

/// Level-scale quantiles; `level` holds, per time, per experimental series `(5%, 50%, 95%)`.
pub fn level_rows(labels: &[String], series: &[usize], posts: &[CounterfactualPosterior], level: &[Vec<[f64; 3]>]) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for (p, qs) in posts.iter().zip(level) {
        for (k, &j) in series.iter().enumerate() {
            let l = &labels[j];
            rows.push(StepRecordRow::new(p.t, &p.time, RowKind::Counterfactual, l, "level_q05", qs[k][0]));
            rows.push(StepRecordRow::new(p.t, &p.time, RowKind::Counterfactual, l, "level_median", qs[k][1]));
            rows.push(StepRecordRow::new(p.t, &p.time, RowKind::Counterfactual, l, "level_q95", qs[k][2]));
        }
    }
    rows
}

/// `start` is the row index of the trajectory's first time.
pub fn monitor_rows(label: &str, start: usize, m: &MonitorTrajectory) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for (i, time) in m.times.iter().enumerate() {
        let t = start + i;
        rows.push(StepRecordRow::new(t, time, RowKind::Monitor, label, "increment", m.increments[i]));
        rows.push(StepRecordRow::new(t, time, RowKind::Monitor, label, "cumulative", m.cumulative[i]));
        rows.push(StepRecordRow::new(t, time, RowKind::Monitor, label, "probability", m.probability[i]));
    }
    rows
}

/// `start` is the row index of each curve's first time.
pub fn grid_rows(start: usize, curves: &[GridCurve]) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for c in curves {
        let label = format!("state={},volatility={}", c.state, c.volatility);
        for (i, time) in c.times.iter().enumerate() {
            let t = start + i;
            rows.push(StepRecordRow::new(t, time, RowKind::Marglik, &label, "cumulative", c.cumulative[i]));
            rows.push(StepRecordRow::new(t, time, RowKind::Marglik, &label, "relative", c.relative[i]));
        }
    }
    rows
}

/// Factor trajectories and singular values; `start` is the first row index.
pub fn factor_rows(start: usize, fs: &FactorSeries) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for (i, time) in fs.times.iter().enumerate() {
        let t = start + i;
        for k in 0..fs.factors[i].len() {
            let l = format!("factor{}", k + 1);
            rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, "value", fs.factors[i][k]));
            rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, "singular_value", fs.singular_values[i][k]));
            if let Some(b) = fs.bands.as_ref().map(|b| &b[i]).filter(|b| !b.is_empty()) {
                rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, "q05", b[k][0]));
                rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, "median", b[k][1]));
                rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, "q95", b[k][2]));
            }
        }
    }
    rows
}

/// Sparsity heatmap tables: loadings `L` (series x factor) and scores `F` (factor x series).
pub fn decomposition_rows(t: usize, time: &str, labels: &[String], dec: &crate::factors::FactorDecomposition) -> Vec<StepRecordRow> {
    let mut rows = Vec::new();
    for k in 0..dec.p() {
        let l = format!("factor{}", k + 1);
        for (j, s) in labels.iter().enumerate() {
            rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, format!("loading:{s}"), dec.loadings[(j, k)]));
            rows.push(StepRecordRow::new(t, time, RowKind::Factor, &l, format!("score:{s}"), dec.scores[(k, j)]));
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a run given the data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub package_version: String,
    pub command: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: RunConfig,
    pub data: Option<DataDigest>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, threads: Option<usize>) -> Result<Self> {
        let data = match &config.data {
            Some(d) if d.path.exists() => Some(DataDigest {
                path: d.path.display().to_string(),
                sha256: sha256_file(&d.path)?,
            }),
            _ => None,
        };
        Ok(Self {
            format_version: FORMAT_VERSION,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            threads,
            config: config.clone(),
            data,
            files: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(File::open(path)?)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("manifest format {} is not supported", m.format_version)));
        }
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
