//! Datasets and CSV ingestion with response standardization and covariate
//! min–max scaling.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants needed to map normalized values back to the original scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub y_mean: [f64; 2],
    pub y_sd: [f64; 2],
    pub x_min: Vec<f64>,
    pub x_range: Vec<f64>,
    #[serde(default)]
    pub columns: Vec<String>,
}

impl Normalization {
    pub fn y_to_original(&self, j: usize, y: f64) -> f64 {
        self.y_mean[j] + self.y_sd[j] * y
    }

    pub fn x_to_original(&self, k: usize, x: f64) -> f64 {
        self.x_min[k] + self.x_range[k] * x
    }

    pub fn x_to_unit(&self, k: usize, x: f64) -> f64 {
        (x - self.x_min[k]) / self.x_range[k]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    /// `n × q` covariates, scaled to `[0, 1]`.
    pub x: DMatrix<f64>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(y1: DVector<f64>, y2: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y1.len();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 observations, got {n}")));
        }
        if y2.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "responses of length {n} and {} with {} covariate rows",
                y2.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Data("no covariate columns".into()));
        }
        if y1.iter().chain(y2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite response value".into()));
        }
        if let Some(bad) = x.iter().find(|v| !(-1e-12..=1.0 + 1e-12).contains(*v)) {
            return Err(Error::Data(format!("covariate value {bad} outside [0, 1]")));
        }
        Ok(Dataset {
            y1,
            y2,
            x,
            normalization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self, j: usize) -> &DVector<f64> {
        if j == 0 {
            &self.y1
        } else {
            &self.y2
        }
    }

    /// Rows in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y1: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y1[i])),
            y2: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y2[i])),
            x: DMatrix::from_fn(idx.len(), self.q(), |r, c| self.x[(idx[r], c)]),
            normalization: self.normalization.clone(),
        }
    }

    /// Keeps only the listed covariate columns.
    pub fn with_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if cols.is_empty() || cols.iter().any(|&c| c >= self.q()) {
            return Err(Error::Config(format!(
                "covariate columns {cols:?} invalid for q = {}",
                self.q()
            )));
        }
        let normalization = self.normalization.as_ref().map(|nm| Normalization {
            y_mean: nm.y_mean,
            y_sd: nm.y_sd,
            x_min: cols.iter().map(|&c| nm.x_min[c]).collect(),
            x_range: cols.iter().map(|&c| nm.x_range[c]).collect(),
            columns: if nm.columns.len() == self.q() + 2 {
                let mut v = nm.columns[..2].to_vec();
                v.extend(cols.iter().map(|&c| nm.columns[c + 2].clone()));
                v
            } else {
                Vec::new()
            },
        });
        Ok(Dataset {
            y1: self.y1.clone(),
            y2: self.y2.clone(),
            x: DMatrix::from_fn(self.n(), cols.len(), |r, c| self.x[(r, cols[c])]),
            normalization,
        })
    }

    /// Writes `y1,y2,x1..xq` with a header.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["y1".to_string(), "y2".to_string()];
        header.extend((1..=self.q()).map(|k| format!("x{k}")));
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![self.y1[i].to_string(), self.y2[i].to_string()];
            row.extend((0..self.q()).map(|k| self.x[(i, k)].to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Reads a CSV with header `y1,y2,x1..xq` (any names; the first two columns
/// are responses), standardizes responses and min–max scales covariates.
pub fn ingest_reader<R: Read>(reader: R) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let columns: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if columns.len() < 3 {
        return Err(Error::Data(format!(
            "expected at least 3 columns (y1, y2, x1..), found {}",
            columns.len()
        )));
    }
    let width = columns.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); width];
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = r + 2;
        if rec.len() != width {
            return Err(Error::Csv {
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(Error::Csv {
                    line,
                    msg: format!("missing value in column '{}'", columns[c]),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                line,
                msg: format!("non-numeric value '{cell}' in column '{}'", columns[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    msg: format!("non-finite value in column '{}'", columns[c]),
                });
            }
            cols[c].push(v);
        }
    }
    let n = cols[0].len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 data rows, found {n}")));
    }

    let mut y_mean = [0.0; 2];
    let mut y_sd = [0.0; 2];
    let mut ys: Vec<DVector<f64>> = Vec::with_capacity(2);
    for j in 0..2 {
        let m = crate::special::mean(&cols[j]);
        let sd = crate::special::variance(&cols[j], 1).sqrt();
        if sd == 0.0 {
            return Err(Error::Data(format!("response column '{}' is constant", columns[j])));
        }
        y_mean[j] = m;
        y_sd[j] = sd;
        ys.push(DVector::from_iterator(n, cols[j].iter().map(|v| (v - m) / sd)));
    }
    let q = width - 2;
    let mut x_min = Vec::with_capacity(q);
    let mut x_range = Vec::with_capacity(q);
    for c in 2..width {
        let lo = cols[c].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cols[c].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(Error::Data(format!(
                "covariate column '{}' is constant (zero range)",
                columns[c]
            )));
        }
        x_min.push(lo);
        x_range.push(hi - lo);
    }
    let x = DMatrix::from_fn(n, q, |i, k| ((cols[k + 2][i] - x_min[k]) / x_range[k]).clamp(0.0, 1.0));
    let y2 = ys.pop().unwrap();
    let y1 = ys.pop().unwrap();
    let mut data = Dataset::new(y1, y2, x)?;
    data.normalization = Some(Normalization {
        y_mean,
        y_sd,
        x_min,
        x_range,
        columns,
    });
    Ok(data)
}

pub fn ingest(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())?;
    ingest_reader(std::io::BufReader::new(f))
}
