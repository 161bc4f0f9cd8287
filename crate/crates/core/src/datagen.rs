//! Synthetic scenarios with known ground truth, and replicate studies.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaParam};
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, PosteriorDraws, SamplerConfig};
use crate::model::{calibration_eta, Dataset, ModelSpec};
use crate::selection::{Criterion, SelectionReport, SelectionRow};
use crate::special::{mix_seed, norm_quantile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    Sc1,
    Sc2,
    Sc3,
    Sc4,
    Sc5,
    Sc6,
    MissCov,
}

impl ScenarioId {
    pub const SIMULATION: [ScenarioId; 6] = [
        ScenarioId::Sc1,
        ScenarioId::Sc2,
        ScenarioId::Sc3,
        ScenarioId::Sc4,
        ScenarioId::Sc5,
        ScenarioId::Sc6,
    ];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::Sc1 => "sc1",
            ScenarioId::Sc2 => "sc2",
            ScenarioId::Sc3 => "sc3",
            ScenarioId::Sc4 => "sc4",
            ScenarioId::Sc5 => "sc5",
            ScenarioId::Sc6 => "sc6",
            ScenarioId::MissCov => "misscov",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "sc1" => ScenarioId::Sc1,
            "sc2" => ScenarioId::Sc2,
            "sc3" => ScenarioId::Sc3,
            "sc4" => ScenarioId::Sc4,
            "sc5" => ScenarioId::Sc5,
            "sc6" => ScenarioId::Sc6,
            "misscov" | "miss-cov" => ScenarioId::MissCov,
            other => return Err(Error::Config(format!("unknown scenario '{other}'"))),
        })
    }
}

/// Where a scenario specifies its dependence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dependence {
    Tau(f64),
    Eta(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub q: usize,
    pub sigma: [f64; 2],
    pub beta: Option<Vec<f64>>,
    pub uniform_margins: bool,
}

const SC3_BETA: [f64; 10] = [1.0, 10.0, -3.0, 6.0, 1.0, -6.0, 3.0, 7.0, -1.0, -5.0];

impl Scenario {
    pub fn new(id: ScenarioId) -> Self {
        let norm = |v: &[f64]| {
            let s = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter().map(|a| a / s).collect::<Vec<_>>()
        };
        let (q, beta) = match id {
            ScenarioId::Sc1 | ScenarioId::Sc2 => (2, Some(norm(&[1.0, 3.0]))),
            ScenarioId::Sc3 => (10, Some(norm(&SC3_BETA))),
            _ => (2, None),
        };
        Scenario {
            id,
            q,
            sigma: [0.2, 0.2],
            beta,
            uniform_margins: false,
        }
    }

    pub fn with_uniform_margins(mut self, on: bool) -> Self {
        self.uniform_margins = on;
        self
    }

    fn index(&self, x: &[f64]) -> f64 {
        let b = self.beta.as_ref().expect("single-index scenario");
        x.iter().zip(b).map(|(a, b)| a * b).sum()
    }

    /// Marginal mean `f_j(x)`, `j ∈ {0, 1}`.
    pub fn f(&self, j: usize, x: &[f64]) -> f64 {
        match (self.id, j) {
            (ScenarioId::Sc3, 0) => self.index(x).cos(),
            (ScenarioId::Sc3, _) => self.index(x).sin(),
            (ScenarioId::MissCov, 0) => 0.6 * (5.0 * x[0] + x[1]).sin(),
            (ScenarioId::MissCov, _) => 0.6 * (x[0] + 5.0 * x[1]).sin(),
            (_, 0) => 0.6 * (5.0 * x[0]).sin() - 0.9 * (2.0 * x[1]).sin(),
            (_, _) => 0.6 * (3.0 * x[0] + 5.0 * x[1]).sin(),
        }
    }

    pub fn dependence(&self, x: &[f64]) -> Dependence {
        match self.id {
            ScenarioId::Sc1 => Dependence::Tau(0.7 + 0.15 * (15.0 * self.index(x)).sin()),
            ScenarioId::Sc2 => Dependence::Tau(0.3 * (5.0 * self.index(x)).sin()),
            ScenarioId::Sc3 => Dependence::Tau(0.7 + 0.2 * (5.0 * self.index(x)).sin()),
            ScenarioId::Sc4 | ScenarioId::MissCov => Dependence::Tau(0.5),
            ScenarioId::Sc5 => {
                Dependence::Eta(1.0 + 0.7 * (3.0 * x[0].powi(3)).sin() - 0.5 * (6.0 * x[1] * x[1]).cos())
            }
            ScenarioId::Sc6 => Dependence::Eta(1.0 + 0.7 * x[0] - 0.5 * x[1] * x[1]),
        }
    }

    /// True copula at `x`; the flag reports a τ clamped into the family's range.
    pub fn copula(&self, family: CopulaFamily, x: &[f64]) -> Result<(CopulaParam, bool)> {
        match self.dependence(x) {
            Dependence::Eta(e) => Ok((family.inv_link(e), false)),
            Dependence::Tau(t) => {
                if family == CopulaFamily::Clayton && self.id == ScenarioId::Sc2 && t < 1e-3 {
                    return Ok((family.theta_from_tau(1e-3)?, true));
                }
                Ok((family.theta_from_tau(t)?, false))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tau: Vec<f64>,
    pub theta: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    /// Observations whose τ was clamped into the family's range.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub scenario: Scenario,
    pub family: CopulaFamily,
    pub seed: u64,
    pub data: Dataset,
    pub truth: GroundTruth,
}

impl Generated {
    /// Writes `data.csv`, `truth.csv` (row-aligned) and `scenario.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut wr = csv::Writer::from_path(dir.join("data.csv"))?;
        let mut truth = csv::Writer::from_path(dir.join("truth.csv"))?;
        let q = self.data.q();
        let mut header = vec!["y1".to_string(), "y2".to_string()];
        header.extend((1..=q).map(|k| format!("x{k}")));
        wr.write_record(&header)?;
        truth.write_record(["tau", "theta", "f1", "f2"])?;
        for i in 0..self.data.n() {
            let mut row = vec![format!("{:?}", self.data.y1[i]), format!("{:?}", self.data.y2[i])];
            row.extend((0..q).map(|k| format!("{:?}", self.data.x[(i, k)])));
            wr.write_record(&row)?;
            let t = &self.truth;
            truth.write_record([t.tau[i], t.theta[i], t.f1[i], t.f2[i]].map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        truth.flush()?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            scenario: &'a Scenario,
            family: CopulaFamily,
            seed: u64,
            n: usize,
            clamped: usize,
        }
        let side = Sidecar {
            scenario: &self.scenario,
            family: self.family,
            seed: self.seed,
            n: self.data.n(),
            clamped: self.truth.clamped,
        };
        std::fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}

/// Draws `n` observations from a scenario under a copula family.
pub fn generate(scenario: &Scenario, n: usize, family: CopulaFamily, seed: u64) -> Result<Generated> {
    if n < 2 {
        return Err(Error::Config(format!("need n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = scenario.q;
    let x = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>());
    let mut y = [DVector::zeros(n), DVector::zeros(n)];
    let mut truth = GroundTruth {
        tau: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
        clamped: 0,
    };
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let (cop, clamped) = scenario.copula(family, &xi)?;
        truth.clamped += clamped as usize;
        let (u1, u2) = cop.sample_pair(&mut rng);
        let f = [scenario.f(0, &xi), scenario.f(1, &xi)];
        for (j, u) in [u1, u2].into_iter().enumerate() {
            y[j][i] = if scenario.uniform_margins {
                u
            } else {
                f[j] + scenario.sigma[j] * norm_quantile(u)
            };
        }
        truth.tau.push(cop.tau());
        truth.theta.push(cop.theta());
        truth.f1.push(f[0]);
        truth.f2.push(f[1]);
    }
    if truth.clamped > 0 {
        log::info!(
            "{}: {} of {n} Kendall tau values clamped into the {} range",
            scenario.id,
            truth.clamped,
            family
        );
    }
    let [y1, y2] = y;
    Ok(Generated {
        scenario: scenario.clone(),
        family,
        seed,
        data: Dataset::new(y1, y2, x)?,
        truth,
    })
}

/// The missing-covariate demonstration: the complete data and the view
/// without the second covariate.
#[derive(Clone, Debug, PartialEq)]
pub struct MissCov {
    pub full: Generated,
    pub x1_only: Dataset,
}

pub fn generate_misscov(n: usize, seed: u64) -> Result<MissCov> {
    let full = generate(&Scenario::new(ScenarioId::MissCov), n, CopulaFamily::Clayton, seed)?;
    let x1_only = full.data.with_columns(&[0])?;
    Ok(MissCov { full, x1_only })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub ibias2: f64,
    pub ivar: f64,
    pub imse: f64,
}

impl ReplicateMetrics {
    pub fn root_imse(&self) -> f64 {
        self.imse.sqrt()
    }
}

/// Integrated squared bias, variance and MSE of `R × n` estimates.
pub fn replicate_metrics(estimates: &DMatrix<f64>, truth: &[f64]) -> Result<ReplicateMetrics> {
    let (r, n) = estimates.shape();
    if r == 0 || n == 0 || n != truth.len() {
        return Err(Error::Dimension(format!(
            "{r} × {n} estimates against {} true values",
            truth.len()
        )));
    }
    let mut ibias2 = 0.0;
    let mut ivar = 0.0;
    for (i, t) in truth.iter().enumerate() {
        let col = estimates.column(i);
        let m = col.sum() / r as f64;
        ibias2 += (m - t) * (m - t);
        ivar += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / r as f64;
    }
    let (ibias2, ivar) = (ibias2 / n as f64, ivar / n as f64);
    Ok(ReplicateMetrics {
        ibias2,
        ivar,
        imse: ibias2 + ivar,
    })
}

/// `m` Halton points in `[0,1]^d`, skipping the origin.
pub fn halton(m: usize, d: usize) -> DMatrix<f64> {
    const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    DMatrix::from_fn(m, d, |i, k| {
        let b = PRIMES[k];
        let (mut f, mut r, mut i) = (1.0, 0.0, (i + 1) as u64);
        while i > 0 {
            f /= b as f64;
            r += f * (i % b) as f64;
            i /= b;
        }
        r
    })
}

pub const U2_GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Covariate points for conditional-expectation accuracy: the 4×4 grid for
/// two covariates, 33 Halton points otherwise.
pub fn evaluation_points(q: usize) -> DMatrix<f64> {
    if q == 2 {
        DMatrix::from_fn(16, 2, |i, k| if k == 0 { U2_GRID[i / 4] } else { U2_GRID[i % 4] })
    } else {
        halton(33, q)
    }
}

/// Posterior mean of τ at each row of `x`.
pub fn posterior_mean_tau(draws: &PosteriorDraws, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let taus = draws.tau_at(x)?;
    let m = taus.len() as f64;
    Ok((0..x.nrows()).map(|i| taus.iter().map(|t| t[i]).sum::<f64>() / m).collect())
}

/// Posterior mean of `E(U1 | U2 = u2, x)` over the grid `x × U2_GRID`,
/// ordered point-major.
pub fn posterior_mean_cond_u(draws: &PosteriorDraws, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let fam = draws.family();
    let etas = draws
        .states
        .par_iter()
        .map(|s| calibration_eta(x, &s.calib, draws.sets.calib.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let m = etas.len() as f64;
    let mut out = Vec::with_capacity(x.nrows() * U2_GRID.len());
    for i in 0..x.nrows() {
        for &u2 in &U2_GRID {
            let s: f64 = etas.par_iter().map(|e| fam.inv_link(e[i]).cond_expectation_u(u2)).sum();
            out.push(s / m);
        }
    }
    Ok(out)
}

fn true_cond_u(scenario: &Scenario, family: CopulaFamily, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.nrows() * U2_GRID.len());
    for i in 0..x.nrows() {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let (cop, _) = scenario.copula(family, &xi)?;
        out.extend(U2_GRID.iter().map(|&u2| cop.cond_expectation_u(u2)));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<ScenarioId>,
    pub models: Vec<ModelSpec>,
    pub replicates: usize,
    pub n: usize,
    #[serde(default)]
    pub uniform_margins: bool,
    pub generator: CopulaFamily,
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Also score conditional expectations `E(U1 | U2, x)`.
    #[serde(default)]
    pub cond_expectation: bool,
}

impl StudyConfig {
    pub fn data_seed(&self, scenario: ScenarioId, rep: usize) -> u64 {
        mix_seed(self.seed, ((scenario as u64) << 32) | rep as u64)
    }

    /// Covariates where τ is scored, shared by every replicate of a scenario.
    pub fn tau_points(&self, scenario: ScenarioId) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0xE7A1 ^ scenario as u64));
        DMatrix::from_fn(self.n, Scenario::new(scenario).q, |_, _| rng.random::<f64>())
    }

    pub fn chain_seed(&self, scenario: ScenarioId, rep: usize, model: usize) -> u64 {
        mix_seed(self.data_seed(scenario, rep), model as u64 + 1)
    }
}

/// One fitted model on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub scenario: ScenarioId,
    pub replicate: usize,
    pub data_seed: u64,
    pub chain_seed: u64,
    pub model: String,
    pub tau_hat: Vec<f64>,
    pub cond_u_hat: Vec<f64>,
    pub selection: Option<SelectionRow>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub scenario: ScenarioId,
    pub model: String,
    pub completed: usize,
    pub failed: usize,
    pub tau: Option<ReplicateMetrics>,
    pub cond_u: Option<ReplicateMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRate {
    pub scenario: ScenarioId,
    pub criterion: Criterion,
    pub model: String,
    pub wins: usize,
    /// Replicates where every model fitted.
    pub contested: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
    pub selection: Vec<SelectionRate>,
    pub fits: Vec<ReplicateFit>,
}

impl StudyTable {
    pub fn row(&self, scenario: ScenarioId, model: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.model == model)
    }

    pub fn wins(&self, scenario: ScenarioId, criterion: Criterion, model: &str) -> usize {
        self.selection
            .iter()
            .find(|s| s.scenario == scenario && s.criterion == criterion && s.model == model)
            .map_or(0, |s| s.wins)
    }

    /// Metrics table: one row per scenario and model.
    pub fn write_metrics<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "seed", "scenario", "model", "completed", "failed", "tau_bias", "tau_sd", "tau_rmse", "condu_bias",
            "condu_sd", "condu_rmse",
        ])?;
        let f = |m: Option<ReplicateMetrics>| match m {
            Some(m) => [m.ibias2.sqrt(), m.ivar.sqrt(), m.imse.sqrt()].map(|v| format!("{v:.6}")),
            None => [String::new(), String::new(), String::new()],
        };
        for r in &self.rows {
            let mut rec = vec![
                self.config.seed.to_string(),
                r.scenario.to_string(),
                r.model.clone(),
                r.completed.to_string(),
                r.failed.to_string(),
            ];
            rec.extend(f(r.tau));
            rec.extend(f(r.cond_u));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_selection<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["seed", "scenario", "criterion", "model", "wins", "contested"])?;
        for s in &self.selection {
            wr.write_record([
                self.config.seed.to_string(),
                s.scenario.to_string(),
                s.criterion.name().to_string(),
                s.model.clone(),
                s.wins.to_string(),
                s.contested.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn fit_one(
    cfg: &StudyConfig,
    scenario: ScenarioId,
    rep: usize,
    k: usize,
    generated: &Result<Generated>,
) -> ReplicateFit {
    let spec = cfg.models[k].with_uniform_margins(cfg.uniform_margins);
    let mut fit = ReplicateFit {
        scenario,
        replicate: rep,
        data_seed: cfg.data_seed(scenario, rep),
        chain_seed: cfg.chain_seed(scenario, rep, k),
        model: spec.label(),
        tau_hat: Vec::new(),
        cond_u_hat: Vec::new(),
        selection: None,
        error: None,
    };
    let run = || -> Result<(Vec<f64>, Vec<f64>, SelectionRow)> {
        let g = generated.as_ref().map_err(|e| Error::Data(format!("generation failed: {e}")))?;
        let mut sc = cfg.sampler.clone();
        sc.seed = fit.chain_seed;
        let draws = run_chain(&g.data, &spec, &sc)?;
        let tau = posterior_mean_tau(&draws, &cfg.tau_points(scenario))?;
        let cu = if cfg.cond_expectation {
            posterior_mean_cond_u(&draws, &evaluation_points(g.data.q()))?
        } else {
            Vec::new()
        };
        Ok((tau, cu, SelectionRow::from_draws(&draws, &g.data)?))
    };
    match run() {
        Ok((t, c, s)) => {
            fit.tau_hat = t;
            fit.cond_u_hat = c;
            fit.selection = Some(s);
        }
        Err(e) => {
            log::warn!("{scenario} replicate {rep} model {}: {e}", fit.model);
            fit.error = Some(e.to_string());
        }
    }
    fit
}

/// Generates every replicate, fits every model, and aggregates accuracy
/// metrics and criterion win counts. Runs on the current rayon pool.
pub fn replicate_study(cfg: &StudyConfig) -> Result<StudyTable> {
    if cfg.replicates == 0 || cfg.models.is_empty() || cfg.scenarios.is_empty() {
        return Err(Error::Config("study needs scenarios, models and replicates".into()));
    }
    cfg.sampler.validate()?;
    let data: BTreeMap<(ScenarioId, usize), Result<Generated>> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| (0..cfg.replicates).map(move |r| (s, r)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(s, r)| {
            let sc = Scenario::new(s).with_uniform_margins(cfg.uniform_margins);
            ((s, r), generate(&sc, cfg.n, cfg.generator, cfg.data_seed(s, r)))
        })
        .collect();
    let jobs: Vec<(ScenarioId, usize, usize)> = data
        .keys()
        .flat_map(|&(s, r)| (0..cfg.models.len()).map(move |k| (s, r, k)))
        .collect();
    let fits: Vec<ReplicateFit> = jobs
        .into_par_iter()
        .map(|(s, r, k)| fit_one(cfg, s, r, k, &data[&(s, r)]))
        .collect();

    let mut rows = Vec::new();
    let mut selection = Vec::new();
    for &s in &cfg.scenarios {
        let sc = Scenario::new(s);
        let eval_x = evaluation_points(sc.q);
        let tau_x = cfg.tau_points(s);
        let tau_truth = (0..tau_x.nrows())
            .map(|i| {
                let xi: Vec<f64> = tau_x.row(i).iter().copied().collect();
                Ok(sc.copula(cfg.generator, &xi)?.0.tau())
            })
            .collect::<Result<Vec<f64>>>()?;
        let cu_truth = if cfg.cond_expectation {
            Some(true_cond_u(&sc, cfg.generator, &eval_x)?)
        } else {
            None
        };
        for k in 0..cfg.models.len() {
            let label = cfg.models[k].with_uniform_margins(cfg.uniform_margins).label();
            let ok: Vec<&ReplicateFit> = fits
                .iter()
                .filter(|f| f.scenario == s && f.model == label && f.error.is_none())
                .collect();
            let failed = cfg.replicates - ok.len();
            let tau = if ok.is_empty() {
                None
            } else {
                let est = DMatrix::from_fn(ok.len(), tau_truth.len(), |r, i| ok[r].tau_hat[i]);
                Some(replicate_metrics(&est, &tau_truth)?)
            };
            let cond_u = match &cu_truth {
                Some(t) if !ok.is_empty() => {
                    let est = DMatrix::from_fn(ok.len(), t.len(), |r, i| ok[r].cond_u_hat[i]);
                    Some(replicate_metrics(&est, t)?)
                }
                _ => None,
            };
            rows.push(StudyRow {
                scenario: s,
                model: label,
                completed: ok.len(),
                failed,
                tau,
                cond_u,
            });
        }
        let mut wins: BTreeMap<(Criterion, usize), usize> = BTreeMap::new();
        let mut contested = 0;
        for r in 0..cfg.replicates {
            let mut report = SelectionReport::default();
            for f in fits.iter().filter(|f| f.scenario == s && f.replicate == r) {
                if let Some(row) = &f.selection {
                    report.push(row.clone());
                }
            }
            if report.rows.len() != cfg.models.len() {
                continue;
            }
            contested += 1;
            for c in Criterion::ALL {
                if let Some(b) = report.best(c) {
                    *wins.entry((c, b)).or_default() += 1;
                }
            }
        }
        for c in Criterion::ALL {
            for k in 0..cfg.models.len() {
                selection.push(SelectionRate {
                    scenario: s,
                    criterion: c,
                    model: cfg.models[k].with_uniform_margins(cfg.uniform_margins).label(),
                    wins: wins.get(&(c, k)).copied().unwrap_or(0),
                    contested,
                });
            }
        }
    }
    Ok(StudyTable {
        config: cfg.clone(),
        rows,
        selection,
        fits,
    })
}
