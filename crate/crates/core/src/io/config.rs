//! TOML run configuration.
//!
//! ```toml
//! version = 1
//! seed = 2024
//! samples = 10000
//!
//! [data]
//! path = "gdp.csv"          # relative to the config file
//! transform = "log-return"
//!
//! [graph]
//! labels = ["A", "B", "C"]
//! parents = { B = ["A"], C = ["A", "B"] }
//!
//! [design]
//! regressors = ["const", "lag:A:1"]
//!
//! [prior]
//! mean = [0.05]             # leading entries; the rest are zero
//! scale = [0.0025, 0.1]     # diagonal; the last value repeats
//! dof = 4
//! var_est = 0.0004
//!
//! [discount]
//! state = 0.95
//! volatility = 0.95
//! ```
//!
//! Optional tables: `[prior.series.LABEL]` and `[discount.series.LABEL]`
//! override the shared template, plus `[marglik]`, `[intervention]`,
//! `[grid]`, `[forecast]`, `[factors]`, `[simulate]` and `[output]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::counterfactual::InterventionSpec;
use crate::engine::{ModelSpec, Regressor, SeriesSpec};
use crate::error::{Error, Result};
use crate::io::data::{self, Dataset, Transform};
use crate::marglik::MargLikMethod;
use crate::structure::{common_parental_sets, GraphStructure};
use crate::udlm::{DiscountSpec, NGPosterior, StateLayout};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Required; there is no entropy-seeded default.
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub reject_explosive: bool,
    pub data: Option<DataConfig>,
    pub graph: GraphConfig,
    #[serde(default)]
    pub design: DesignConfig,
    pub prior: PriorConfig,
    pub discount: DiscountConfig,
    pub marglik: Option<MargLikConfig>,
    pub intervention: Option<InterventionConfig>,
    pub grid: Option<GridConfig>,
    pub forecast: Option<ForecastConfig>,
    pub factors: Option<FactorConfig>,
    pub simulate: Option<SimulateConfig>,
    pub output: Option<OutputConfig>,
}

fn default_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub labels: Vec<String>,
    #[serde(default)]
    pub parents: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// `"const"` or `"lag:LABEL:k"`.
    pub regressors: Vec<String>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            regressors: vec!["const".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTemplate {
    #[serde(default)]
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub dof: f64,
    pub var_est: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub dof: f64,
    pub var_est: f64,
    #[serde(default)]
    pub series: BTreeMap<String, PriorTemplate>,
}

impl PriorConfig {
    pub fn template(&self) -> PriorTemplate {
        PriorTemplate {
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            dof: self.dof,
            var_est: self.var_est,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountValues {
    pub state: f64,
    /// Parental block discount; `state` when absent.
    pub parental: Option<f64>,
    pub volatility: f64,
}

impl DiscountValues {
    pub fn spec(&self) -> Result<DiscountSpec> {
        DiscountSpec::new(self.state, self.parental.unwrap_or(self.state), self.volatility)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountConfig {
    pub state: f64,
    pub parental: Option<f64>,
    pub volatility: f64,
    #[serde(default)]
    pub series: BTreeMap<String, DiscountValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MargLikConfig {
    #[serde(default = "default_marglik_enabled")]
    pub enabled: bool,
    #[serde(default = "default_marglik_method")]
    pub method: MargLikMethod,
}

fn default_marglik_enabled() -> bool {
    true
}

fn default_marglik_method() -> MargLikMethod {
    MargLikMethod::Posterior
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionConfig {
    /// Time label of the first affected row after any transform.
    pub start: String,
    pub controls: Vec<String>,
    pub oam_state: f64,
    pub oam_volatility: Option<f64>,
    /// Times whose Bayes factor increments are zeroed in a second monitor.
    #[serde(default)]
    pub monitor_exclude: Vec<String>,
    #[serde(default = "default_effect_draws")]
    pub effect_draws: usize,
    /// Also report level-scale counterfactual quantiles (log-return data only).
    #[serde(default)]
    pub levels: bool,
}

fn default_effect_draws() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub state: Vec<f64>,
    pub volatility: Vec<f64>,
    /// `(state, volatility)` the curves are compared against.
    pub baseline: (f64, f64),
    /// Exclusive end time label.
    pub end: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// First forecast time label; one past the last row when absent.
    pub origin: Option<String>,
}

fn default_replicates() -> usize {
    5_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    /// One member label per parental set, in reference order.
    pub set_order: Option<Vec<String>>,
    /// Per-draw quantile bands.
    #[serde(default)]
    pub bands: bool,
    /// First time label of the singular-value averaging window.
    pub average_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub length: usize,
    pub precision: f64,
    #[serde(default)]
    pub intercept: f64,
    /// Parental coefficients are uniform on `[-parental, parental]`.
    #[serde(default)]
    pub parental: f64,
    /// Random-walk standard deviation of every state element.
    #[serde(default)]
    pub drift: f64,
    pub shift: Option<ShiftConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub series: Vec<String>,
    /// Row index of the first shifted observation.
    pub start: usize,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Some(d) = &mut cfg.data {
            if d.path.is_relative() {
                if let Some(dir) = path.parent() {
                    let joined = dir.join(&d.path);
                    d.path = std::fs::canonicalize(&joined).unwrap_or(joined);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn graph(&self) -> Result<GraphStructure> {
        GraphStructure::from_labelled(self.graph.labels.clone(), &self.graph.parents)
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.graph
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Config(format!("unknown series label {label:?}")))
    }

    pub fn regressors(&self) -> Result<Vec<Regressor>> {
        self.design
            .regressors
            .iter()
            .map(|r| self.parse_regressor(r))
            .collect()
    }

    fn parse_regressor(&self, text: &str) -> Result<Regressor> {
        let parts: Vec<&str> = text.split(':').collect();
        match parts.as_slice() {
            ["const"] => Ok(Regressor::Constant),
            ["lag", label] => Ok(Regressor::Lag {
                series: self.label_index(label)?,
                lag: 1,
            }),
            ["lag", label, k] => Ok(Regressor::Lag {
                series: self.label_index(label)?,
                lag: k
                    .parse()
                    .map_err(|_| Error::Config(format!("bad lag in regressor {text:?}")))?,
            }),
            _ => Err(Error::Config(format!(
                "regressor {text:?} is neither \"const\" nor \"lag:LABEL:k\""
            ))),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let graph = self.graph()?;
        let regressors = self.regressors()?;
        for key in self.prior.series.keys().chain(self.discount.series.keys()) {
            self.label_index(key)?;
        }
        let template = self.prior.template();
        let shared = DiscountValues {
            state: self.discount.state,
            parental: self.discount.parental,
            volatility: self.discount.volatility,
        };
        let series = (0..graph.q())
            .map(|j| {
                let label = &self.graph.labels[j];
                let layout = StateLayout::new(regressors.len(), graph.parents(j).len());
                let tpl = self.prior.series.get(label).unwrap_or(&template);
                let discount = self
                    .discount
                    .series
                    .get(label)
                    .unwrap_or(&shared)
                    .spec()?;
                Ok(SeriesSpec {
                    regressors: regressors.clone(),
                    evolution: None,
                    discount,
                    prior: prior_from(tpl, layout)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            graph,
            series,
            samples: self.samples,
            reject_explosive: self.reject_explosive,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Loads the data file, applies the transform and orders columns as the graph labels.
    pub fn dataset(&self) -> Result<Dataset> {
        let d = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("no [data] table".into()))?;
        data::ingest(&d.path, d.transform)?.reorder(&self.graph.labels)
    }

    pub fn marglik_method(&self) -> Option<MargLikMethod> {
        self.marglik.as_ref().filter(|m| m.enabled).map(|m| m.method)
    }

    pub fn intervention(&self, data: &Dataset) -> Result<InterventionSpec> {
        let iv = self
            .intervention
            .as_ref()
            .ok_or_else(|| Error::Config("no [intervention] table".into()))?;
        let start = data
            .time_index(&iv.start)
            .ok_or_else(|| Error::Config(format!("intervention time {:?} not in data", iv.start)))?;
        let controls: Vec<usize> = iv
            .controls
            .iter()
            .map(|l| self.label_index(l))
            .collect::<Result<_>>()?;
        let control_set: BTreeSet<usize> = controls.iter().copied().collect();
        let experimental = (0..self.graph.labels.len())
            .filter(|j| !control_set.contains(j))
            .collect();
        Ok(InterventionSpec {
            start,
            controls,
            experimental,
            oam_state: iv.oam_state,
            oam_volatility: iv.oam_volatility,
        })
    }

    /// All `(state, volatility)` combinations of the grid.
    pub fn grid_pairs(&self) -> Result<Vec<(f64, f64)>> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config("no [grid] table".into()))?;
        Ok(g.state
            .iter()
            .flat_map(|&s| g.volatility.iter().map(move |&v| (s, v)))
            .collect())
    }

    /// Parental-set indices in the configured reference order.
    pub fn factor_set_order(&self) -> Result<Option<Vec<usize>>> {
        let Some(order) = self.factors.as_ref().and_then(|f| f.set_order.as_ref()) else {
            return Ok(None);
        };
        let part = common_parental_sets(&self.graph()?);
        let mut out = Vec::with_capacity(order.len());
        for label in order {
            let j = self.label_index(label)?;
            let h = part
                .set_of(j)
                .ok_or_else(|| Error::Config(format!("{label} is not a parent of any series")))?;
            if out.contains(&h) {
                return Err(Error::Config(format!("set of {label} listed twice in factor order")));
            }
            out.push(h);
        }
        if out.len() != part.sets.len() {
            return Err(Error::Config(format!(
                "factor order names {} of {} parental sets",
                out.len(),
                part.sets.len()
            )));
        }
        Ok(Some(out))
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.output.as_ref().map(|o| o.dir.as_path())
    }
}

/// Expands a template: `mean` pads with zeros, `scale` repeats its last entry.
pub fn prior_from(tpl: &PriorTemplate, layout: StateLayout) -> Result<NGPosterior> {
    let d = layout.dim();
    if tpl.mean.len() > d {
        return Err(Error::Config(format!("prior mean has {} entries for state length {d}", tpl.mean.len())));
    }
    let last = *tpl
        .scale
        .last()
        .ok_or_else(|| Error::Config("prior scale is empty".into()))?;
    let mean = DVector::from_fn(d, |i, _| tpl.mean.get(i).copied().unwrap_or(0.0));
    let diag = DVector::from_fn(d, |i, _| tpl.scale.get(i).copied().unwrap_or(last));
    NGPosterior::new(mean, DMatrix::from_diagonal(&diag), tpl.dof, tpl.var_est, layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
version = 1
seed = 7
samples = 100

[graph]
labels = ["A", "B", "C"]
parents = { B = ["A"], C = ["A", "B"] }

[design]
regressors = ["const", "lag:A:1"]

[prior]
mean = [0.05]
scale = [0.0025, 0.1]
dof = 4
var_est = 0.0004

[prior.series.C]
scale = [1.0]
dof = 10
var_est = 1.0

[discount]
state = 0.95
volatility = 0.98

[discount.series.B]
state = 0.9
parental = 0.8
volatility = 0.97

[intervention]
start = "2"
controls = ["A"]
oam_state = 0.5
"#;

    #[test]
    fn sample_config_builds() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.q(), 3);
        assert_eq!(spec.max_lag(), 1);
        let a = &spec.series[0].prior;
        assert_eq!(a.mean.as_slice(), &[0.05, 0.0]);
        assert_eq!(a.scale[(1, 1)], 0.1);
        let c = &spec.series[2].prior;
        assert_eq!(c.dim(), 4);
        assert_eq!(c.scale[(3, 3)], 1.0);
        assert_eq!(c.dof, 10.0);
        assert_eq!(spec.series[1].discount.parental, 0.8);
        assert_eq!(spec.series[0].discount.parental, 0.95);
        let data = Dataset::from_matrix(DMatrix::zeros(4, 3));
        let data = Dataset::new(vec!["A".into(), "B".into(), "C".into()], data.times, data.values).unwrap();
        let iv = cfg.intervention(&data).unwrap();
        assert_eq!(iv.start, 2);
        assert_eq!(iv.experimental, vec![1, 2]);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn seed_is_required_and_version_checked() {
        let no_seed = SAMPLE.replace("seed = 7\n", "");
        assert!(RunConfig::parse(&no_seed).is_err());
        let v2 = SAMPLE.replace("version = 1", "version = 2");
        assert!(RunConfig::parse(&v2).is_err());
    }

    #[test]
    fn bad_regressor_is_reported() {
        let cfg = RunConfig::parse(&SAMPLE.replace("lag:A:1", "lag:Z:1")).unwrap();
        assert!(cfg.model_spec().is_err());
    }
}
