//! Model-selection criteria from posterior draws: CVML, CCVML and WAIC.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::model::{pointwise_loglik, Dataset, ModelSpec};
use crate::special::{log_mean_exp, mean};

/// Per-draw, per-observation log-likelihood pieces (`M × n`).
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikMatrix {
    /// `log P(y1i, y2i | ω(t))`.
    pub joint: DMatrix<f64>,
    /// `log P(yji | ω(t))`; zero for uniform margins.
    pub marg: [DMatrix<f64>; 2],
}

impl LogLikMatrix {
    pub fn new(joint: DMatrix<f64>, marg: [DMatrix<f64>; 2]) -> Result<Self> {
        let shape = joint.shape();
        if marg[0].shape() != shape || marg[1].shape() != shape {
            return Err(Error::Dimension("log-likelihood pieces differ in shape".into()));
        }
        let m = LogLikMatrix { joint, marg };
        m.check()?;
        Ok(m)
    }

    /// Joint-only terms with unit marginal densities.
    pub fn joint_only(joint: DMatrix<f64>) -> Result<Self> {
        let z = DMatrix::zeros(joint.nrows(), joint.ncols());
        Self::new(joint, [z.clone(), z])
    }

    pub fn from_draws(draws: &PosteriorDraws, data: &Dataset) -> Result<Self> {
        let rows = draws
            .states
            .par_iter()
            .enumerate()
            .map(|(t, s)| {
                pointwise_loglik(data, s, &draws.sets).map_err(|e| match e {
                    Error::NonFinite { what, obs, .. } => Error::NonFinite { what, obs, draw: t },
                    e => e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (m, n) = (rows.len(), data.n());
        let joint = DMatrix::from_fn(m, n, |t, i| rows[t].joint[i]);
        let marg = [
            DMatrix::from_fn(m, n, |t, i| rows[t].marg[0][i]),
            DMatrix::from_fn(m, n, |t, i| rows[t].marg[1][i]),
        ];
        Self::new(joint, marg)
    }

    pub fn n_draws(&self) -> usize {
        self.joint.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.joint.ncols()
    }

    fn check(&self) -> Result<()> {
        for (what, m) in [
            ("log-likelihood", &self.joint),
            ("marginal log-density", &self.marg[0]),
            ("marginal log-density", &self.marg[1]),
        ] {
            for i in 0..m.ncols() {
                for t in 0..m.nrows() {
                    if !m[(t, i)].is_finite() {
                        return Err(Error::NonFinite { what, obs: i, draw: t });
                    }
                }
            }
        }
        Ok(())
    }

    fn require_draws(&self, k: usize) -> Result<()> {
        if self.n_draws() < k {
            return Err(Error::Config(format!(
                "criterion needs at least {k} draws, got {}",
                self.n_draws()
            )));
        }
        Ok(())
    }
}

/// Cross-validated marginal likelihood; larger is better.
pub fn cvml_from(ll: &LogLikMatrix) -> Result<f64> {
    ll.require_draws(1)?;
    Ok(-(0..ll.n_obs())
        .map(|i| log_mean_exp(ll.joint.column(i).iter().map(|v| -v)))
        .sum::<f64>())
}

/// Conditional CVML; larger is better.
pub fn ccvml_from(ll: &LogLikMatrix) -> Result<f64> {
    ll.require_draws(1)?;
    let s: f64 = (0..ll.n_obs())
        .map(|i| {
            let j = ll.joint.column(i);
            let a = log_mean_exp(ll.marg[1].column(i).iter().zip(j.iter()).map(|(m, l)| m - l));
            let b = log_mean_exp(ll.marg[0].column(i).iter().zip(j.iter()).map(|(m, l)| m - l));
            a + b
        })
        .sum();
    Ok(-0.5 * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub fit: f64,
    /// Summed unbiased variances.
    pub penalty: f64,
    /// Summed population variances.
    pub penalty_population: f64,
}

/// WAIC; smaller is better.
pub fn waic_from(ll: &LogLikMatrix) -> Result<Waic> {
    ll.require_draws(2)?;
    let m = ll.n_draws() as f64;
    let mut fit = 0.0;
    let mut pop = 0.0;
    for i in 0..ll.n_obs() {
        let col = ll.joint.column(i);
        fit += log_mean_exp(col.iter().copied());
        // shifted by the first value so constant columns give exactly zero
        let col: Vec<f64> = col.iter().map(|v| v - col[0]).collect();
        let mu = mean(&col);
        pop += col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
    }
    let penalty = pop * m / (m - 1.0);
    Ok(Waic {
        waic: -2.0 * fit + 2.0 * penalty,
        fit,
        penalty,
        penalty_population: pop,
    })
}

pub fn cvml(draws: &PosteriorDraws, data: &Dataset) -> Result<f64> {
    cvml_from(&LogLikMatrix::from_draws(draws, data)?)
}

pub fn ccvml(draws: &PosteriorDraws, data: &Dataset) -> Result<f64> {
    ccvml_from(&LogLikMatrix::from_draws(draws, data)?)
}

pub fn waic(draws: &PosteriorDraws, data: &Dataset) -> Result<Waic> {
    waic_from(&LogLikMatrix::from_draws(draws, data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub model: String,
    pub spec: ModelSpec,
    pub cvml: f64,
    pub ccvml: f64,
    pub waic: Waic,
    pub n_draws: usize,
}

impl SelectionRow {
    pub fn from_matrix(spec: ModelSpec, ll: &LogLikMatrix) -> Result<Self> {
        Ok(SelectionRow {
            model: spec.label(),
            spec,
            cvml: cvml_from(ll)?,
            ccvml: ccvml_from(ll)?,
            waic: waic_from(ll)?,
            n_draws: ll.n_draws(),
        })
    }

    pub fn from_draws(draws: &PosteriorDraws, data: &Dataset) -> Result<Self> {
        Self::from_matrix(draws.spec, &LogLikMatrix::from_draws(draws, data)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Cvml,
    Ccvml,
    Waic,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Cvml, Criterion::Ccvml, Criterion::Waic];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Cvml => "CVML",
            Criterion::Ccvml => "CCVML",
            Criterion::Waic => "WAIC",
        }
    }

    /// Value oriented so that larger is better.
    pub fn score(self, row: &SelectionRow) -> f64 {
        match self {
            Criterion::Cvml => row.cvml,
            Criterion::Ccvml => row.ccvml,
            Criterion::Waic => -row.waic.waic,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rows: Vec<SelectionRow>,
}

impl SelectionReport {
    pub fn push(&mut self, row: SelectionRow) {
        self.rows.push(row);
    }

    /// Index of the preferred row under `criterion`.
    pub fn best(&self, criterion: Criterion) -> Option<usize> {
        self.rows
            .iter()
            .enumerate()
            .max_by(|a, b| criterion.score(a.1).total_cmp(&criterion.score(b.1)))
            .map(|(i, _)| i)
    }

    /// One row per model: CVML, CCVML, WAIC, tagged with the chain seed and
    /// dataset label.
    pub fn write_table<W: Write>(&self, w: W, seed: u64, dataset: &str) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["seed", "dataset", "model", "CVML", "CCVML", "WAIC", "fit", "penalty", "n_draws"])?;
        for r in &self.rows {
            wr.write_record([
                seed.to_string(),
                dataset.to_string(),
                r.model.clone(),
                format!("{:.4}", r.cvml),
                format!("{:.4}", r.ccvml),
                format!("{:.4}", r.waic.waic),
                format!("{:.4}", r.waic.fit),
                format!("{:.4}", r.waic.penalty),
                r.n_draws.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
