//! Command-line front end: argument parsing, run configuration and result
//! persistence.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use condcop::datagen::{generate, generate_misscov, replicate_study, Scenario, ScenarioId, StudyConfig};
use condcop::mcmc::{run_chain, PosteriorDraws, SamplerConfig, Summary};
use condcop::model::{CalibrationKind, ModelSpec};
use condcop::sa_test::{sa_test, DEFAULT_PERMUTATIONS};
use condcop::selection::{SelectionReport, SelectionRow};
use condcop::special::mix_seed;
use condcop::{CopulaFamily, Dataset, Error};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "condcop", version, about = "Bayesian conditional copulas with sparse GP calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Fit,
    Select,
    SaTest,
    Simulate,
    Replicate,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one model and write draws plus a summary.
    Fit(Flags),
    /// Fit several models and compare CVML, CCVML and WAIC.
    Select(Flags),
    /// Permutation test of a covariate-free copula on held-out data.
    SaTest(Flags),
    /// Write a synthetic dataset with its ground truth.
    Simulate(Flags),
    /// Replicate study over scenarios and models.
    Replicate(Flags),
}

impl Command {
    fn parts(&self) -> (CommandKind, &Flags) {
        match self {
            Command::Fit(f) => (CommandKind::Fit, f),
            Command::Select(f) => (CommandKind::Select, f),
            Command::SaTest(f) => (CommandKind::SaTest, f),
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::Replicate(f) => (CommandKind::Replicate, f),
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with header y1,y2,x1..xq.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic scenario (sc1..sc6, misscov) used instead of --data.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Sample size for synthetic data.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub family: Option<String>,
    /// gpsim, constant or single:<k>.
    #[arg(long)]
    pub calibration: Option<String>,
    /// Candidate models as family[:calibration]; repeatable.
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Copula family that generates synthetic data.
    #[arg(long)]
    pub generator: Option<String>,
    /// Responses are treated as uniform; CSV data are converted to ranks.
    #[arg(long)]
    pub uniform_margins: bool,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Inducing points for all three GPs.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub m1: Option<usize>,
    #[arg(long)]
    pub m2: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training fraction for sa-test.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Number of permutations for sa-test.
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated scenarios for replicate.
    #[arg(long)]
    pub scenarios: Option<String>,
}

/// Fully resolved configuration; written to every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub data: Option<PathBuf>,
    pub scenario: Option<ScenarioId>,
    pub scenarios: Vec<ScenarioId>,
    pub n: usize,
    pub generator: CopulaFamily,
    pub family: CopulaFamily,
    pub calibration: CalibrationKind,
    pub models: Vec<ModelSpec>,
    pub uniform_margins: bool,
    pub sampler: SamplerConfig,
    pub jobs: usize,
    pub out: PathBuf,
    pub ratio: f64,
    pub permutations: usize,
    pub replicates: usize,
}

impl RunConfig {
    fn defaults(command: CommandKind) -> Self {
        RunConfig {
            command,
            data: None,
            scenario: None,
            scenarios: Vec::new(),
            n: 400,
            generator: CopulaFamily::Clayton,
            family: CopulaFamily::Clayton,
            calibration: CalibrationKind::GpSim,
            models: Vec::new(),
            uniform_margins: false,
            sampler: SamplerConfig::default(),
            jobs: 1,
            out: PathBuf::from("condcop-out"),
            ratio: 2.0 / 3.0,
            permutations: DEFAULT_PERMUTATIONS,
            replicates: 50,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.family, self.calibration).with_uniform_margins(self.uniform_margins)
    }

    /// Data path or scenario name, for provenance columns.
    pub fn dataset_label(&self) -> String {
        match (&self.data, self.scenario) {
            (Some(p), _) => p.display().to_string(),
            (None, Some(s)) => s.to_string(),
            (None, None) => String::new(),
        }
    }

    pub fn model_list(&self) -> Vec<ModelSpec> {
        if self.models.is_empty() {
            match self.command {
                CommandKind::Select | CommandKind::Replicate => CopulaFamily::ALL
                    .iter()
                    .map(|&f| ModelSpec::new(f, CalibrationKind::GpSim))
                    .collect(),
                _ => vec![self.spec()],
            }
        } else {
            self.models.clone()
        }
        .into_iter()
        .map(|m| m.with_uniform_margins(self.uniform_margins))
        .collect()
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Error> {
    s.parse()
}

/// `family[:calibration]`, e.g. `clayton`, `frank:constant`, `gumbel:single:2`.
pub fn parse_model(s: &str) -> Result<ModelSpec, Error> {
    let (fam, cal) = match s.split_once(':') {
        Some((f, c)) => (f, c),
        None => (s, "gpsim"),
    };
    Ok(ModelSpec::new(parse(fam)?, parse(cal)?))
}

/// Merges a config file and command-line flags into a [`RunConfig`].
pub fn resolve(command: CommandKind, f: &Flags) -> Result<RunConfig, Error> {
    let mut c = match &f.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let c: RunConfig = serde_json::from_str(&text)?;
            if c.command != command {
                return Err(Error::Config(format!(
                    "config file is for '{:?}', not '{:?}'",
                    c.command, command
                )));
            }
            c
        }
        None => RunConfig::defaults(command),
    };
    let fresh = f.config.is_none();
    if let Some(d) = &f.data {
        c.data = Some(d.clone());
        c.scenario = None;
    }
    if let Some(s) = &f.scenario {
        c.scenario = Some(parse(s)?);
        c.data = None;
    }
    if let Some(s) = &f.scenarios {
        c.scenarios = s.split(',').map(|t| parse(t.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(n) = f.n {
        c.n = n;
    }
    if let Some(g) = &f.generator {
        c.generator = parse(g)?;
    }
    if let Some(fam) = &f.family {
        c.family = parse(fam)?;
    }
    if let Some(cal) = &f.calibration {
        c.calibration = parse(cal)?;
    }
    if !f.models.is_empty() {
        c.models = f.models.iter().map(|m| parse_model(m)).collect::<Result<_, _>>()?;
    }
    if f.uniform_margins {
        c.uniform_margins = true;
    }
    if let Some(it) = f.iters {
        c.sampler.iters = it;
        if f.burn_in.is_none() {
            c.sampler.burn_in = it / 2;
        }
    }
    if let Some(b) = f.burn_in {
        c.sampler.burn_in = b;
    }
    if let Some(t) = f.thin {
        c.sampler.thin = t;
    }
    if let Some(m) = f.m {
        c.sampler.m = m;
        c.sampler.m1 = m;
        c.sampler.m2 = m;
    }
    if let Some(m) = f.m1 {
        c.sampler.m1 = m;
    }
    if let Some(m) = f.m2 {
        c.sampler.m2 = m;
    }
    if let Some(s) = f.seed {
        c.sampler.seed = s;
    }
    if let Some(j) = f.jobs {
        c.jobs = j.max(1);
    }
    if let Some(o) = &f.out {
        c.out = o.clone();
    }
    if let Some(r) = f.ratio {
        c.ratio = r;
    }
    if let Some(p) = f.permutations {
        c.permutations = p;
    }
    if let Some(r) = f.replicates {
        c.replicates = r;
    }
    if fresh && c.command == CommandKind::Replicate && c.scenarios.is_empty() {
        c.scenarios = c.scenario.map_or_else(|| ScenarioId::SIMULATION.to_vec(), |s| vec![s]);
    }
    validate(&c)?;
    Ok(c)
}

fn validate(c: &RunConfig) -> Result<(), Error> {
    c.sampler.validate()?;
    let needs_data = matches!(c.command, CommandKind::Fit | CommandKind::Select | CommandKind::SaTest);
    if needs_data && c.data.is_none() && c.scenario.is_none() {
        return Err(Error::Config("give --data or --scenario".into()));
    }
    if c.command == CommandKind::Simulate && c.scenario.is_none() {
        return Err(Error::Config("simulate needs --scenario".into()));
    }
    if c.command == CommandKind::SaTest && c.permutations == 0 {
        return Err(Error::Config("--permutations must be positive".into()));
    }
    if c.command == CommandKind::Replicate && c.replicates == 0 {
        return Err(Error::Config("--replicates must be positive".into()));
    }
    Ok(())
}

/// Replaces responses by their normalized ranks `r / (n + 1)`.
pub fn to_pseudo_observations(data: &Dataset) -> Dataset {
    let n = data.n();
    let rank = |y: &DVector<f64>| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let mut r = DVector::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            r[i] = (k + 1) as f64 / (n + 1) as f64;
        }
        r
    };
    let mut out = data.clone();
    out.y1 = rank(&data.y1);
    out.y2 = rank(&data.y2);
    out
}

fn load_data(c: &RunConfig) -> Result<Dataset, Error> {
    let data = match (&c.data, c.scenario) {
        (Some(p), _) => condcop::ingest(p)?,
        (None, Some(ScenarioId::MissCov)) => generate_misscov(c.n, c.sampler.seed)?.x1_only,
        (None, Some(s)) => {
            let sc = Scenario::new(s).with_uniform_margins(c.uniform_margins);
            return Ok(generate(&sc, c.n, c.generator, mix_seed(c.sampler.seed, 0xDA7A))?.data);
        }
        (None, None) => return Err(Error::Config("give --data or --scenario".into())),
    };
    Ok(if c.uniform_margins {
        to_pseudo_observations(&data)
    } else {
        data
    })
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

/// Posterior summary written by `fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub seed: u64,
    pub n_draws: usize,
    pub beta: Option<Vec<Summary>>,
    pub sigma2: Option<[Summary; 2]>,
    pub log_posterior: Summary,
    pub acceptance: std::collections::BTreeMap<String, f64>,
}

/// One-dimensional slices of τ̂: covariate `k` on a grid, others at 0.5.
pub fn tau_slices(draws: &PosteriorDraws, q: usize, points: usize) -> condcop::Result<Vec<(usize, f64, Summary)>> {
    let mut out = Vec::new();
    for k in 0..q {
        let x = DMatrix::from_fn(points, q, |i, c| {
            if c == k {
                i as f64 / (points - 1) as f64
            } else {
                0.5
            }
        });
        let taus = draws.tau_at(&x)?;
        for i in 0..points {
            let col: Vec<f64> = taus.iter().map(|t| t[i]).collect();
            out.push((k, x[(i, k)], Summary::of(&col)));
        }
    }
    Ok(out)
}

fn write_slices(
    path: &Path,
    slices: &[(usize, f64, Summary)],
    data: &Dataset,
    c: &RunConfig,
    model: &str,
) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(["seed", "dataset", "model", "covariate", "x", "x_original", "mean", "lower", "upper"])?;
    let (seed, dataset) = (c.sampler.seed.to_string(), c.dataset_label());
    for (k, x, s) in slices {
        let orig = data.normalization.as_ref().map_or(*x, |nm| nm.x_to_original(*k, *x));
        wr.write_record([
            seed.clone(),
            dataset.clone(),
            model.to_string(),
            format!("x{}", k + 1),
            format!("{x:.6}"),
            format!("{orig:.6}"),
            format!("{:.6}", s.mean),
            format!("{:.6}", s.lower),
            format!("{:.6}", s.upper),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn fit_summary(draws: &PosteriorDraws) -> FitSummary {
    FitSummary {
        model: draws.spec.label(),
        seed: draws.seed(),
        n_draws: draws.len(),
        beta: draws.beta_summary(),
        sigma2: draws.sigma2_summary(),
        log_posterior: Summary::of(&draws.log_posterior),
        acceptance: draws.acceptance.clone(),
    }
}

fn cmd_fit(c: &RunConfig) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let draws = run_chain(&data, &c.spec(), &c.sampler)?;
    draws.save(&c.out)?;
    let summary = fit_summary(&draws);
    write_json(&c.out.join("summary.json"), &summary)?;
    let slices = tau_slices(&draws, data.q(), 51)?;
    write_slices(&c.out.join("tau_slices.csv"), &slices, &data, c, &summary.model)?;
    log::info!(
        "{}: {} draws, mean log-posterior {:.3}",
        summary.model,
        summary.n_draws,
        summary.log_posterior.mean
    );
    Ok(())
}

fn cmd_select(c: &RunConfig) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let mut report = SelectionReport::default();
    for spec in c.model_list() {
        let draws = run_chain(&data, &spec, &c.sampler)?;
        draws.save(c.out.join("models").join(spec.label()))?;
        let row = SelectionRow::from_draws(&draws, &data)?;
        log::info!("{}: CVML {:.3} CCVML {:.3} WAIC {:.3}", row.model, row.cvml, row.ccvml, row.waic.waic);
        report.push(row);
    }
    write_json(&c.out.join("selection.json"), &report)?;
    report.write_table(fs::File::create(c.out.join("selection.csv"))?, c.sampler.seed, &c.dataset_label())?;
    Ok(())
}

fn cmd_sa_test(c: &RunConfig) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let seed = c.sampler.seed;
    let report = sa_test(
        &data,
        &c.spec(),
        &c.sampler,
        c.ratio,
        c.permutations,
        mix_seed(seed, 0x5917),
        mix_seed(seed, 0x9E6),
    )?;
    log::info!(
        "EV (CVML) {:.3}: {:?}; EV (CCVML) {:.3}: {:?}",
        report.cvml.ev,
        report.cvml.decision,
        report.ccvml.ev,
        report.ccvml.decision
    );
    write_json(&c.out.join("evidence.json"), &report)?;
    Ok(())
}

fn cmd_simulate(c: &RunConfig) -> anyhow::Result<()> {
    let id = c.scenario.expect("validated");
    let seed = mix_seed(c.sampler.seed, 0xDA7A);
    if id == ScenarioId::MissCov {
        let m = generate_misscov(c.n, c.sampler.seed)?;
        m.full.write(&c.out)?;
        m.x1_only.write_csv(fs::File::create(c.out.join("data_x1_only.csv"))?)?;
    } else {
        let sc = Scenario::new(id).with_uniform_margins(c.uniform_margins);
        generate(&sc, c.n, c.generator, seed)?.write(&c.out)?;
    }
    Ok(())
}

fn cmd_replicate(c: &RunConfig) -> anyhow::Result<()> {
    let cfg = StudyConfig {
        scenarios: c.scenarios.clone(),
        models: c.model_list(),
        replicates: c.replicates,
        n: c.n,
        uniform_margins: c.uniform_margins,
        generator: c.generator,
        sampler: c.sampler.clone(),
        seed: c.sampler.seed,
        cond_expectation: true,
    };
    let table = replicate_study(&cfg)?;
    write_json(&c.out.join("study.json"), &table)?;
    table.write_metrics(fs::File::create(c.out.join("metrics.csv"))?)?;
    table.write_selection(fs::File::create(c.out.join("selection_rates.csv"))?)?;
    let failed: usize = table.rows.iter().map(|r| r.failed).sum();
    if failed > 0 {
        log::warn!("{failed} fits failed; see study.json");
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (kind, flags) = cli.command.parts();
    let config = match resolve(kind, flags) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match execute(&config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(ce) => exit_code(ce),
                None => EXIT_CONFIG,
            }
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Executes a resolved configuration, writing `config.json` first.
pub fn execute(c: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    write_json(&c.out.join("config.json"), c)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(c.jobs).build()?;
    pool.install(|| match c.command {
        CommandKind::Fit => cmd_fit(c),
        CommandKind::Select => cmd_select(c),
        CommandKind::SaTest => cmd_sa_test(c),
        CommandKind::Simulate => cmd_simulate(c),
        CommandKind::Replicate => cmd_replicate(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_strings() {
        let m = parse_model("gumbel:single:2").unwrap();
        assert_eq!(m.family, CopulaFamily::Gumbel);
        assert_eq!(m.calibration, CalibrationKind::SingleCovariate { index: 1 });
        assert_eq!(parse_model("frank").unwrap().calibration, CalibrationKind::GpSim);
        assert!(parse_model("banana").is_err());
    }

    #[test]
    fn flags_override_config_and_burn_in_follows_iters() {
        let f = Flags {
            scenario: Some("sc4".into()),
            iters: Some(400),
            m: Some(10),
            ..Default::default()
        };
        let c = resolve(CommandKind::Fit, &f).unwrap();
        assert_eq!((c.sampler.iters, c.sampler.burn_in), (400, 200));
        assert_eq!((c.sampler.m1, c.sampler.m2, c.sampler.m), (10, 10, 10));
        let bad = Flags {
            scenario: Some("sc4".into()),
            calibration: Some("wavy".into()),
            ..Default::default()
        };
        assert!(matches!(resolve(CommandKind::Fit, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn pseudo_observations_are_ranks() {
        let d = Dataset::new(
            DVector::from_vec(vec![3.0, -1.0, 2.0]),
            DVector::from_vec(vec![0.0, 5.0, 1.0]),
            DMatrix::from_vec(3, 1, vec![0.0, 0.5, 1.0]),
        )
        .unwrap();
        let p = to_pseudo_observations(&d);
        assert_eq!(p.y1.as_slice(), &[0.75, 0.25, 0.5]);
        assert_eq!(p.y2.as_slice(), &[0.25, 0.75, 0.5]);
    }
}
