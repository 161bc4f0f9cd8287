//! Columnar draw files: one CSV row per stored draw plus a JSON header.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{PosteriorDraws, SamplerConfig};
use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::model::{CalibrationKind, CalibrationState, FullState, InducingSets, MarginalState, Margins, ModelSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DrawsHeader {
    pub spec: ModelSpec,
    pub config: SamplerConfig,
    pub seed: u64,
    pub n_draws: usize,
    pub q: usize,
    pub m1: usize,
    pub m2: usize,
    pub m: usize,
    pub columns: Vec<String>,
    pub sets: InducingSets,
    pub acceptance: BTreeMap<String, f64>,
    pub step_sizes: BTreeMap<String, f64>,
}

struct Layout {
    q: usize,
    m_marg: [usize; 2],
    m: usize,
}

impl Layout {
    fn of(spec: &ModelSpec, sets: &InducingSets, q: usize) -> Result<Self> {
        let m_marg = if spec.uniform_margins {
            [0, 0]
        } else {
            [sets.margin(0)?.len(), sets.margin(1)?.len()]
        };
        let m = match spec.calibration {
            CalibrationKind::Constant => 0,
            _ => sets.calibration()?.len(),
        };
        Ok(Layout { q, m_marg, m })
    }

    fn columns(&self, spec: &ModelSpec) -> Vec<String> {
        let mut c = vec!["log_posterior".to_string()];
        if !spec.uniform_margins {
            for j in 1..=2 {
                c.push(format!("sigma2_{j}"));
                c.extend((0..=self.q).map(|k| format!("w{j}_{k}")));
                c.extend((0..self.m_marg[j - 1]).map(|k| format!("f{j}_{k}")));
            }
        }
        match spec.calibration {
            CalibrationKind::Constant => c.push("eta".into()),
            kind => {
                c.extend((0..2).map(|k| format!("w_{k}")));
                c.extend((0..self.m).map(|k| format!("f_{k}")));
                if kind == CalibrationKind::GpSim {
                    c.extend((0..self.q).map(|k| format!("beta_{k}")));
                }
            }
        }
        c
    }
}

fn flatten(state: &FullState, lp: f64) -> Vec<f64> {
    let mut row = vec![lp];
    if let Margins::Gaussian { margins } = &state.margins {
        for m in margins {
            row.push(m.sigma2);
            row.extend_from_slice(m.w.as_slice());
            row.extend(m.f_tilde.iter());
        }
    }
    match &state.calib {
        CalibrationState::Constant { eta } => row.push(*eta),
        CalibrationState::SingleCovariate { f_tilde, w, .. } => {
            row.extend_from_slice(w.as_slice());
            row.extend(f_tilde.iter());
        }
        CalibrationState::GpSim { beta, f_tilde, w } => {
            row.extend_from_slice(w.as_slice());
            row.extend(f_tilde.iter());
            row.extend(beta.iter());
        }
    }
    row
}

fn unflatten(row: &[f64], spec: &ModelSpec, lay: &Layout) -> (FullState, f64) {
    let mut it = row.iter().copied();
    let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
    let lp = take(1)[0];
    let margins = if spec.uniform_margins {
        Margins::Uniform
    } else {
        let mut one = |j: usize| {
            let sigma2 = take(1)[0];
            let w = KernelParams(take(lay.q + 1));
            let f_tilde = DVector::from_vec(take(lay.m_marg[j]));
            MarginalState { f_tilde, w, sigma2 }
        };
        let a = one(0);
        let b = one(1);
        Margins::Gaussian { margins: [a, b] }
    };
    let calib = match spec.calibration {
        CalibrationKind::Constant => CalibrationState::Constant { eta: take(1)[0] },
        CalibrationKind::SingleCovariate { index } => {
            let w = KernelParams(take(2));
            let f_tilde = DVector::from_vec(take(lay.m));
            CalibrationState::SingleCovariate { index, f_tilde, w }
        }
        CalibrationKind::GpSim => {
            let w = KernelParams(take(2));
            let f_tilde = DVector::from_vec(take(lay.m));
            let beta = DVector::from_vec(take(lay.q));
            CalibrationState::GpSim { beta, f_tilde, w }
        }
    };
    (
        FullState {
            margins,
            calib,
            family: spec.family,
        },
        lp,
    )
}

fn input_dim(draws: &PosteriorDraws) -> usize {
    let s = draws.states.first();
    match (s.and_then(|s| s.marginal(0)), s.and_then(|s| s.calib.beta())) {
        (Some(m), _) => m.w.input_dim(),
        (None, Some(b)) => b.len(),
        _ => match &draws.sets.margins {
            Some(z) => z[0].dim(),
            None => 1,
        },
    }
}

impl PosteriorDraws {
    pub fn header(&self) -> Result<DrawsHeader> {
        let q = input_dim(self);
        let lay = Layout::of(&self.spec, &self.sets, q)?;
        Ok(DrawsHeader {
            spec: self.spec,
            config: self.config.clone(),
            seed: self.config.seed,
            n_draws: self.len(),
            q,
            m1: lay.m_marg[0],
            m2: lay.m_marg[1],
            m: lay.m,
            columns: lay.columns(&self.spec),
            sets: self.sets.clone(),
            acceptance: self.acceptance.clone(),
            step_sizes: self.step_sizes.clone(),
        })
    }

    pub fn write<W1: Write, W2: Write>(&self, csv_out: W1, header_out: W2) -> Result<()> {
        let header = self.header()?;
        serde_json::to_writer_pretty(header_out, &header)?;
        let mut wr = csv::Writer::from_writer(csv_out);
        wr.write_record(&header.columns)?;
        for (s, lp) in self.states.iter().zip(&self.log_posterior) {
            let row = flatten(s, *lp);
            if row.len() != header.columns.len() {
                return Err(Error::Dimension(format!(
                    "draw has {} values but the layout has {} columns",
                    row.len(),
                    header.columns.len()
                )));
            }
            wr.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read<R1: Read, R2: Read>(csv_in: R1, header_in: R2) -> Result<Self> {
        let header: DrawsHeader = serde_json::from_reader(header_in)?;
        let lay = Layout {
            q: header.q,
            m_marg: [header.m1, header.m2],
            m: header.m,
        };
        let expected = lay.columns(&header.spec);
        if expected != header.columns {
            return Err(Error::Data("draw header columns do not match the model layout".into()));
        }
        let mut rd = csv::Reader::from_reader(csv_in);
        if rd.headers()?.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Data("draw file columns do not match the header".into()));
        }
        let mut states = Vec::with_capacity(header.n_draws);
        let mut log_posterior = Vec::with_capacity(header.n_draws);
        for (r, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row: Vec<f64> = rec
                .iter()
                .map(|c| {
                    c.parse::<f64>().map_err(|_| Error::Csv {
                        line: r + 2,
                        msg: format!("non-numeric draw value '{c}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != expected.len() {
                return Err(Error::Csv {
                    line: r + 2,
                    msg: format!("expected {} values, found {}", expected.len(), row.len()),
                });
            }
            let (s, lp) = unflatten(&row, &header.spec, &lay);
            states.push(s);
            log_posterior.push(lp);
        }
        if states.len() != header.n_draws {
            return Err(Error::Data(format!(
                "header declares {} draws, file has {}",
                header.n_draws,
                states.len()
            )));
        }
        Ok(PosteriorDraws {
            spec: header.spec,
            config: header.config,
            sets: header.sets,
            states,
            log_posterior,
            acceptance: header.acceptance,
            step_sizes: header.step_sizes,
        })
    }

    /// Writes `draws.csv` and `draws.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let c = std::io::BufWriter::new(std::fs::File::create(dir.join("draws.csv"))?);
        let h = std::io::BufWriter::new(std::fs::File::create(dir.join("draws.json"))?);
        self.write(c, h)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let c = std::io::BufReader::new(std::fs::File::open(dir.join("draws.csv"))?);
        let h = std::io::BufReader::new(std::fs::File::open(dir.join("draws.json"))?);
        Self::read(c, h)
    }
}
