//! Rectangular time-series tables: header row of series labels, first
//! column a time label.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    None,
    /// `log(x_t / x_{t-1})`; drops the first period.
    LogReturn,
}

/// Observations with one row per time and one column per series.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub times: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Dataset {
    pub fn new(labels: Vec<String>, times: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != labels.len() || values.nrows() != times.len() {
            return Err(Error::Dimension(format!(
                "{}x{} values for {} times and {} labels",
                values.nrows(),
                values.ncols(),
                times.len(),
                labels.len()
            )));
        }
        Ok(Self {
            labels,
            times,
            values,
        })
    }

    /// Unlabelled data: series `y0, y1, ...` and times `0, 1, ...`.
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let labels = (0..values.ncols()).map(|j| format!("y{j}")).collect();
        let times = (0..values.nrows()).map(|t| t.to_string()).collect();
        Self {
            labels,
            times,
            values,
        }
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn time_index(&self, label: &str) -> Option<usize> {
        self.times.iter().position(|t| t == label)
    }

    /// Reorders columns to `order`, failing on unknown labels.
    pub fn reorder(&self, order: &[String]) -> Result<Self> {
        let idx = order
            .iter()
            .map(|l| {
                self.labels.iter().position(|x| x == l).ok_or_else(|| Error::Ingest {
                    row: 0,
                    column: l.clone(),
                    message: "series missing from data header".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels: order.to_vec(),
            times: self.times.clone(),
            values: self.values.select_columns(&idx),
        })
    }

    pub fn apply(&self, transform: Transform) -> Result<Self> {
        match transform {
            Transform::None => Ok(self.clone()),
            Transform::LogReturn => {
                let n = self.len();
                if n < 2 {
                    return Err(Error::Ingest {
                        row: n,
                        column: String::new(),
                        message: "log returns need at least two rows".into(),
                    });
                }
                let mut out = DMatrix::zeros(n - 1, self.q());
                for t in 1..n {
                    for j in 0..self.q() {
                        let (a, b) = (self.values[(t - 1, j)], self.values[(t, j)]);
                        if !(a > 0.0 && b > 0.0) {
                            return Err(Error::Ingest {
                                row: t + 1,
                                column: self.labels[j].clone(),
                                message: "log return of a non-positive level".into(),
                            });
                        }
                        out[(t - 1, j)] = (b / a).ln();
                    }
                }
                Ok(Self {
                    labels: self.labels.clone(),
                    times: self.times[1..].to_vec(),
                    values: out,
                })
            }
        }
    }
}

/// Parses a CSV table. Row numbers in errors count the header as row 1.
pub fn parse<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Ingest {
            row: 1,
            column: String::new(),
            message: "header needs a time column and at least one series".into(),
        });
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Ingest {
                row,
                column: String::new(),
                message: format!("{} fields, expected {}", rec.len(), header.len()),
            });
        }
        times.push(rec[0].to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let column = labels[j].clone();
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(Error::Ingest {
                    row,
                    column,
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Ingest {
                row,
                column: column.clone(),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest {
                    row,
                    column,
                    message: "non-finite value".into(),
                });
            }
            flat.push(v);
        }
    }
    let values = DMatrix::from_row_slice(times.len(), labels.len(), &flat);
    Dataset::new(labels, times, values)
}

pub fn ingest(path: &Path, transform: Transform) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    parse(file)?.apply(transform)
}

/// Writes values with 17 significant digits so re-reading is exact.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(data.labels.iter().cloned());
    w.write_record(&header)?;
    for t in 0..data.len() {
        let mut rec = vec![data.times[t].clone()];
        rec.extend((0..data.q()).map(|j| format!("{:.16e}", data.values[(t, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
