//! Subcommand drivers: each reads a config, runs one analysis and writes
//! its tables plus `<command>.manifest.json` into an output directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::counterfactual::{cfm_run, effect_summary, intervention_monitor, level_quantiles, oam_run};
use crate::engine::{self, forecast_k, Regressor, StepOptions};
use crate::error::{Error, Result};
use crate::factors::{canonicalize, factor_series, reference_pattern, svd_factorize, FactorInput};
use crate::io::config::RunConfig;
use crate::io::data::{self, Dataset, Transform};
use crate::io::export::{self, Manifest, RowKind, StepRecordRow};
use crate::io::simulate::{simulate, TrueParameters};
use crate::marglik::discount_grid;
use crate::rng::{self, purpose};
use crate::structure::{
    common_parental_sets, eigen_diagnostics, moral_pattern, structural_rank, ParentalPartition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Forecast,
    Counterfactual,
    Factors,
    DiscountGrid,
    Simulate,
    Diagnose,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Fit,
        Command::Forecast,
        Command::Counterfactual,
        Command::Factors,
        Command::DiscountGrid,
        Command::Simulate,
        Command::Diagnose,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Forecast => "forecast",
            Command::Counterfactual => "counterfactual",
            Command::Factors => "factors",
            Command::DiscountGrid => "discount-grid",
            Command::Simulate => "simulate",
            Command::Diagnose => "diagnose",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown command {s:?}")))
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
    /// Short human-readable report.
    pub summary: String,
}

struct Sink<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Sink<'_> {
    fn rows(&mut self, name: &str, rows: &[StepRecordRow]) -> Result<()> {
        let p = self.dir.join(name);
        export::write_rows(&p, rows)?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.dir.join(name);
        serde_json::to_writer_pretty(std::fs::File::create(&p)?, value)?;
        self.files.push(p);
        Ok(())
    }
}

/// Runs `cmd` and writes its outputs into `out`.
pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<RunOutput> {
    std::fs::create_dir_all(out)?;
    let mut sink = Sink {
        dir: out,
        files: Vec::new(),
    };
    let summary = match cmd {
        Command::Fit => fit(cfg, &mut sink)?,
        Command::Forecast => forecast(cfg, &mut sink)?,
        Command::Counterfactual => counterfactual(cfg, &mut sink)?,
        Command::Factors => factors(cfg, &mut sink)?,
        Command::DiscountGrid => grid(cfg, &mut sink)?,
        Command::Simulate => simulate_cmd(cfg, &mut sink)?,
        Command::Diagnose => diagnose(cfg, &mut sink)?,
    };
    let mut manifest = Manifest::new(cmd.as_str(), cfg, threads)?;
    manifest.files = sink
        .files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let mpath = out.join(format!("{}.manifest.json", cmd.as_str()));
    manifest.write(&mpath)?;
    sink.files.push(mpath);
    Ok(RunOutput {
        manifest,
        files: sink.files,
        summary,
    })
}

/// Repeats the run recorded in a manifest.
pub fn rerun(manifest: &Path, out: &Path) -> Result<RunOutput> {
    let m = Manifest::read(manifest)?;
    if let (Some(d), Some(cfg_data)) = (&m.data, &m.config.data) {
        let now = export::sha256_file(&cfg_data.path)?;
        if now != d.sha256 {
            return Err(Error::Config(format!("data file {} changed since the recorded run", d.path)));
        }
    }
    execute(m.command.parse()?, &m.config, out, m.threads)
}

fn time_row(data: &Dataset, label: &str) -> Result<usize> {
    data.time_index(label)
        .ok_or_else(|| Error::Config(format!("time {label:?} not in data")))
}

fn filter_opts(cfg: &RunConfig) -> StepOptions {
    StepOptions {
        marglik: cfg.marglik_method(),
        ..StepOptions::default()
    }
}

fn fit(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let (_, records) = engine::run(&spec, &data, cfg.seed, &filter_opts(cfg), None)?;
    sink.rows("fit.csv", &export::record_rows(&data.labels, &records))?;
    let min_ess = records.iter().map(|r| r.ess_fraction).fold(f64::INFINITY, f64::min);
    let mut s = format!("filtered {} rows; minimum ESS fraction {min_ess:.4}", records.len());
    if records.iter().all(|r| r.marglik.is_some()) && !records.is_empty() {
        let total: f64 = records.iter().map(|r| r.marglik.as_ref().unwrap().log_pred).sum();
        let _ = write!(s, "; log predictive {total:.4}");
    }
    Ok(s)
}

fn forecast(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let fc = cfg
        .forecast
        .as_ref()
        .ok_or_else(|| Error::Config("no [forecast] table".into()))?;
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let end = match &fc.origin {
        Some(l) => time_row(&data, l)?,
        None => data.len(),
    };
    let opts = filter_opts(cfg);
    let (state, records) = engine::run(&spec, &data, cfg.seed, &opts, Some(end))?;
    let paths = forecast_k(&spec, &data, &state, fc.horizon, fc.replicates, &opts)?;
    let mut rows = export::record_rows(&data.labels, &records);
    rows.extend(export::forecast_rows(&data.labels, &data.times, &paths));
    sink.rows("forecast.csv", &rows)?;
    Ok(format!(
        "{} paths of {} steps from row {}; {} singular draws redrawn",
        paths.paths.len(),
        fc.horizon,
        paths.start,
        paths.resampled
    ))
}

fn counterfactual(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let iv = cfg.intervention(&data)?;
    let icfg = cfg.intervention.as_ref().expect("checked by intervention()");
    let opts = StepOptions {
        keep_fitted: true,
        ..filter_opts(cfg)
    };
    let (cfm, posts) = cfm_run(&spec, &data, &iv, cfg.seed, &opts)?;
    let oam = oam_run(&spec, &data, &iv, cfg.seed, &opts)?;
    let from = |recs: &[engine::StepRecord]| -> Vec<engine::StepRecord> {
        recs.iter().filter(|r| r.t >= iv.start).cloned().collect()
    };
    let effects = effect_summary(&from(&cfm), &from(&oam), &iv.experimental, icfg.effect_draws, cfg.seed)?;
    let mut rows = export::counterfactual_rows(&data.labels, &posts, &data.values);
    rows.extend(export::effect_rows(&data.labels, &effects));
    if icfg.levels {
        let transform = cfg.data.as_ref().map_or(Transform::None, |d| d.transform);
        if transform != Transform::LogReturn {
            return Err(Error::Config("level quantiles need log-return data".into()));
        }
        let path = &cfg.data.as_ref().expect("dataset loaded").path;
        let raw = data::ingest(path, Transform::None)?.reorder(&cfg.graph.labels)?;
        // transformed row t is the change from raw row t to raw row t + 1
        let anchor: Vec<f64> = iv.experimental.iter().map(|&j| raw.values[(iv.start, j)]).collect();
        let levels = level_quantiles(&anchor, &posts, icfg.effect_draws, cfg.seed);
        rows.extend(export::level_rows(&data.labels, &iv.experimental, &posts, &levels));
    }
    sink.rows("counterfactual.csv", &rows)?;
    sink.rows("cfm.csv", &export::record_rows(&data.labels, &cfm))?;
    sink.rows("oam.csv", &export::record_rows(&data.labels, &oam))?;

    let mon = intervention_monitor(&spec, &data, &iv, cfg.seed, &BTreeSet::new())?;
    let mut mrows = export::monitor_rows("oam_vs_baseline", iv.start, &mon);
    if !icfg.monitor_exclude.is_empty() {
        let excluded: BTreeSet<String> = icfg.monitor_exclude.iter().cloned().collect();
        let ex = intervention_monitor(&spec, &data, &iv, cfg.seed, &excluded)?;
        mrows.extend(export::monitor_rows("oam_vs_baseline_excluding", iv.start, &ex));
    }
    sink.rows("monitor.csv", &mrows)?;

    let mut s = format!(
        "counterfactual from {} for {} experimental series",
        data.times[iv.start],
        iv.experimental.len()
    );
    if let Some((i, p)) = mon.probability.iter().enumerate().find(|(_, &p)| p > 0.95) {
        let _ = write!(s, "; monitor exceeds 0.95 at {} ({p:.3})", mon.times[i]);
    }
    Ok(s)
}

fn factors(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let fcfg = cfg.factors.clone().unwrap_or_default();
    let mut opts = StepOptions {
        keep_samples: fcfg.bands,
        ..StepOptions::default()
    };
    // coefficient summaries come from the adaptive run when an intervention is configured
    if cfg.intervention.is_some() {
        opts.overrides.push(cfg.intervention(&data)?.oam_override());
    }
    let (_, records) = engine::run(&spec, &data, cfg.seed, &opts, None)?;
    let part = common_parental_sets(&spec.graph);
    let order = cfg.factor_set_order()?;
    let reference = reference_pattern(&part, spec.q(), order.as_deref(), None);
    let inputs: Vec<FactorInput> = records
        .iter()
        .map(|r| FactorInput {
            time: r.time.clone(),
            gamma: r.gamma_mean.clone(),
            y: data.row(r.t),
            samples: r.samples.as_deref().map(|s| (&spec, s)),
        })
        .collect();
    let fs = factor_series(&inputs, &part, &reference)?;
    let start = records.first().map_or(0, |r| r.t);
    let mut rows = export::factor_rows(start, &fs);
    for r in &records {
        let dec = canonicalize(&svd_factorize(&r.gamma_mean, &part)?, &reference)?;
        rows.extend(export::decomposition_rows(r.t, &r.time, &data.labels, &dec));
    }
    if let Some(from) = &fcfg.average_from {
        let first = fs
            .times
            .iter()
            .position(|t| t == from)
            .ok_or_else(|| Error::Config(format!("time {from:?} not among factor times")))?;
        let window = &fs.singular_values[first..];
        let p = reference.nrows();
        let last = fs.times.len() - 1;
        for k in 0..p {
            let mean = window.iter().map(|d| d[k]).sum::<f64>() / window.len() as f64;
            rows.push(StepRecordRow::new(
                start + last,
                &fs.times[last],
                RowKind::Factor,
                format!("factor{}", k + 1),
                "average_singular_value",
                mean,
            ));
        }
    }
    sink.rows("factors.csv", &rows)?;
    Ok(format!("{} factors over {} times", reference.nrows(), fs.times.len()))
}

fn grid(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let spec = cfg.model_spec()?;
    let data = cfg.dataset()?;
    let g = cfg.grid.as_ref().ok_or_else(|| Error::Config("no [grid] table".into()))?;
    let end = g.end.as_deref().map(|l| time_row(&data, l)).transpose()?;
    let pairs = cfg.grid_pairs()?;
    let curves = discount_grid(&spec, &data, &pairs, g.baseline, cfg.seed, end)?;
    sink.rows("discount_grid.csv", &export::grid_rows(spec.max_lag(), &curves))?;
    let best = curves
        .iter()
        .max_by(|a, b| {
            let la = a.cumulative.last().copied().unwrap_or(f64::NEG_INFINITY);
            let lb = b.cumulative.last().copied().unwrap_or(f64::NEG_INFINITY);
            la.total_cmp(&lb)
        })
        .map(|c| (c.state, c.volatility));
    Ok(format!("{} curves; best (state, volatility) {best:?}", curves.len()))
}

/// True-parameter schedule from the `[simulate]` table.
pub fn simulation_schedule(cfg: &RunConfig) -> Result<Vec<TrueParameters>> {
    let sc = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("no [simulate] table".into()))?;
    let spec = cfg.model_spec()?;
    let q = spec.q();
    let mut rng = rng::stream(cfg.seed, &[purpose::SIMULATE, u64::MAX]);
    let mut states: Vec<DVector<f64>> = (0..q)
        .map(|j| {
            let layout = spec.layout(j);
            let mut s = DVector::zeros(layout.dim());
            for (i, r) in spec.series[j].regressors.iter().enumerate() {
                if *r == Regressor::Constant {
                    s[i] = sc.intercept;
                }
            }
            for i in layout.parental_range() {
                s[i] = rng.random_range(-1.0..=1.0) * sc.parental;
            }
            s
        })
        .collect();
    let shifted: Vec<usize> = match &sc.shift {
        Some(sh) => sh
            .series
            .iter()
            .map(|l| {
                cfg.graph
                    .labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Error::Config(format!("unknown series label {l:?}")))
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let precisions = DVector::from_element(q, sc.precision);
    let mut out = Vec::with_capacity(sc.length);
    for t in 0..sc.length {
        if t > 0 && sc.drift > 0.0 {
            for s in &mut states {
                for v in s.iter_mut() {
                    *v += sc.drift * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
        }
        let offset = sc.shift.as_ref().filter(|sh| t >= sh.start).map(|sh| {
            let mut o = DVector::zeros(q);
            for &j in &shifted {
                o[j] = sh.size;
            }
            o
        });
        out.push(TrueParameters {
            states: states.clone(),
            precisions: precisions.clone(),
            offset,
        });
    }
    Ok(out)
}

fn simulate_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let spec = cfg.model_spec()?;
    let schedule = simulation_schedule(cfg)?;
    let sim = simulate(&spec, &schedule, cfg.seed)?;
    let p = sink.dir.join("simulated.csv");
    data::write_csv(&sim.data, &p)?;
    sink.files.push(p);
    let labels = &sim.data.labels;
    let mut rows = Vec::new();
    for (t, time) in sim.data.times.iter().enumerate() {
        for (j, l) in labels.iter().enumerate() {
            rows.push(StepRecordRow::new(t, time, RowKind::Posterior, l, "true_alpha", sim.truth.alpha[t][j]));
            rows.push(StepRecordRow::new(t, time, RowKind::Posterior, l, "true_precision", schedule[t].precisions[j]));
            for &h in spec.graph.parents(j) {
                rows.push(StepRecordRow::new(
                    t,
                    time,
                    RowKind::Posterior,
                    format!("{l}<-{}", labels[h]),
                    "true_gamma",
                    sim.truth.gamma[t][(j, h)],
                ));
            }
        }
    }
    sink.rows("truth.csv", &rows)?;
    let rho = sim.truth.spectral_radius.iter().copied().fold(0.0, f64::max);
    Ok(format!("simulated {} rows; largest spectral radius {rho:.4}", sim.data.len()))
}

#[derive(Debug, Serialize)]
struct Diagnosis {
    q: usize,
    labels: Vec<String>,
    edges: usize,
    acyclic: bool,
    only_even_cycles: bool,
    childless: Vec<String>,
    parental_sets: Vec<NamedSet>,
    structural_p: usize,
    moral_edges: Vec<(String, String)>,
    prior_mean_spectral_radius: f64,
    prior_mean_gershgorin_ok: bool,
    disjoint_cycle_bound: Option<usize>,
}

#[derive(Debug, Serialize)]
struct NamedSet {
    members: Vec<String>,
    children: Vec<String>,
    rank_bound: usize,
}

fn named(labels: &[String], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| labels[i].clone()).collect()
}

fn diagnose(cfg: &RunConfig, sink: &mut Sink) -> Result<String> {
    let spec = cfg.model_spec()?;
    let g = &spec.graph;
    let labels = g.labels();
    let part: ParentalPartition = common_parental_sets(g);
    let rank = structural_rank(&part, None);
    let moral = moral_pattern(g);
    let mut moral_edges = Vec::new();
    for i in 0..g.q() {
        for j in i + 1..g.q() {
            if moral[(i, j)] {
                moral_edges.push((labels[i].clone(), labels[j].clone()));
            }
        }
    }
    let prior_states: Vec<DVector<f64>> = spec.series.iter().map(|s| s.prior.mean.clone()).collect();
    let eig = eigen_diagnostics(g, &engine::assemble_gamma(&spec, &prior_states))?;
    let d = Diagnosis {
        q: g.q(),
        labels: labels.to_vec(),
        edges: g.edge_count(),
        acyclic: g.is_acyclic(),
        only_even_cycles: g.has_only_even_cycles(),
        childless: named(labels, &g.childless()),
        parental_sets: part
            .sets
            .iter()
            .map(|s| NamedSet {
                members: named(labels, &s.members),
                children: named(labels, &s.children),
                rank_bound: s.rank_bound,
            })
            .collect(),
        structural_p: rank.p,
        moral_edges,
        prior_mean_spectral_radius: eig.spectral_radius,
        prior_mean_gershgorin_ok: eig.gershgorin_ok,
        disjoint_cycle_bound: eig.disjoint_cycle_bound,
    };
    sink.json("diagnose.json", &d)?;
    let mut s = format!(
        "{} series, {} edges, {} parental sets, structural p = {}, {} childless",
        d.q,
        d.edges,
        d.parental_sets.len(),
        d.structural_p,
        d.childless.len()
    );
    for set in &d.parental_sets {
        let _ = write!(s, "\n  {{{}}} -> {{{}}} (p_h = {})", set.members.join(","), set.children.join(","), set.rank_bound);
    }
    Ok(s)
}
