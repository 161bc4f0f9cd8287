//! Posterior sampling: the Metropolis-within-Gibbs chain, its three-stage
//! initialization, and the stored draws.

pub mod adapt;
pub mod ess;
mod io;
pub mod sampler;
pub mod vmf;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::error::{Error, Result};
use crate::gp::{interp_matrix, interp_with_factor, GpFactor, KernelParams};
use crate::model::{
    calibration_eta, margin_terms, marginal_means, CalibrationKind, CalibrationState, Dataset, FullState,
    InducingSets, MarginalState, Margins, ModelSpec,
};
use crate::special::{kendall_tau, mix_seed, quantile, variance};

pub use ess::{ess_step, ess_update};
pub use sampler::{Sampler, Stage, StepSizes};
pub use vmf::sample_vmf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iters: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    pub target_accept: f64,
    pub adapt_window: usize,
    pub seed: u64,
    pub m1: usize,
    pub m2: usize,
    pub m: usize,
    /// Length of each of the three initialization chains.
    pub init_iters: usize,
}

fn one() -> usize {
    1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::new(10_000, 0)
    }
}

impl SamplerConfig {
    /// `iters` sweeps with the first half discarded as burn-in.
    pub fn new(iters: usize, seed: u64) -> Self {
        SamplerConfig {
            iters,
            burn_in: iters / 2,
            thin: 1,
            target_accept: 0.30,
            adapt_window: 50,
            seed,
            m1: 30,
            m2: 30,
            m: 30,
            init_iters: 150,
        }
    }

    pub fn with_inducing(mut self, m1: usize, m2: usize, m: usize) -> Self {
        self.m1 = m1;
        self.m2 = m2;
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.burn_in >= self.iters {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iters
            )));
        }
        if self.m1 < 2 || self.m2 < 2 || self.m < 2 {
            return Err(Error::Config("inducing counts must be at least 2".into()));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::Config("thinning and adaptation window must be positive".into()));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Stored post-burn-in draws with everything needed to reuse them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub config: SamplerConfig,
    pub sets: InducingSets,
    pub states: Vec<FullState>,
    pub log_posterior: Vec<f64>,
    /// Post-burn-in acceptance rate per block.
    pub acceptance: BTreeMap<String, f64>,
    /// Final proposal scales (frozen after burn-in).
    pub step_sizes: BTreeMap<String, f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn family(&self) -> CopulaFamily {
        self.spec.family
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Calibration values `η` at the rows of `x`, one vector per draw.
    pub fn eta_at(&self, x: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        self.states
            .iter()
            .map(|s| calibration_eta(x, &s.calib, self.sets.calib.as_ref()))
            .collect()
    }

    /// Kendall's τ at the rows of `x`, one vector per draw.
    pub fn tau_at(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let fam = self.family();
        Ok(self
            .eta_at(x)?
            .into_iter()
            .map(|e| e.iter().map(|&v| fam.inv_link(v).tau()).collect())
            .collect())
    }

    /// Marginal means at the rows of `x`, one pair per draw.
    pub fn means_at(&self, x: &DMatrix<f64>) -> Result<Option<Vec<[DVector<f64>; 2]>>> {
        if self.spec.uniform_margins {
            return Ok(None);
        }
        let z = [self.sets.margin(0)?, self.sets.margin(1)?];
        self.states
            .iter()
            .map(|s| {
                Ok([
                    marginal_means(x, s.marginal(0).unwrap(), z[0])?,
                    marginal_means(x, s.marginal(1).unwrap(), z[1])?,
                ])
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// β draws flipped onto the hemisphere of the running mean direction.
    pub fn aligned_betas(&self) -> Option<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(self.len());
        let mut running: Option<DVector<f64>> = None;
        for s in &self.states {
            let b = s.calib.beta()?.clone();
            let b = match &running {
                Some(r) if r.dot(&b) < 0.0 => -b,
                _ => b,
            };
            running = Some(match running {
                Some(r) => r + &b,
                None => b.clone(),
            });
            out.push(b);
        }
        Some(out)
    }

    /// Component-wise posterior mean and 95% interval of aligned β.
    pub fn beta_summary(&self) -> Option<Vec<Summary>> {
        let betas = self.aligned_betas()?;
        let q = betas.first()?.len();
        Some(
            (0..q)
                .map(|k| Summary::of(&betas.iter().map(|b| b[k]).collect::<Vec<_>>()))
                .collect(),
        )
    }

    pub fn sigma2_summary(&self) -> Option<[Summary; 2]> {
        if self.spec.uniform_margins || self.is_empty() {
            return None;
        }
        let col = |j: usize| {
            Summary::of(&self.states.iter().map(|s| s.marginal(j).unwrap().sigma2).collect::<Vec<_>>())
        };
        Some([col(0), col(1)])
    }
}

/// Posterior mean with 2.5% and 97.5% empirical quantiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Summary {
            mean: crate::special::mean(xs),
            lower: quantile(xs, 0.025),
            upper: quantile(xs, 0.975),
        }
    }
}

/// Marginal regression start: the sparse-GP posterior mean of `f̃` under a
/// Gaussian likelihood with variance `s2`.
fn regression_start(data: &Dataset, sets: &InducingSets, j: usize) -> Result<MarginalState> {
    let z = sets.margin(j)?;
    let w = KernelParams::uniform(data.q(), 0.0, -2.0);
    let y = data.y(j);
    let s2 = (0.25 * variance(y.as_slice(), 1)).max(1e-4);
    let factor = GpFactor::new(z, &w)?;
    let block = interp_with_factor(&data.x, z, &w, factor)?;
    // whitened coordinates: f̃ = L v, design Φ = A L
    let phi = &block.a * &block.factor.chol;
    let m = z.len();
    let prec = DMatrix::identity(m, m) + phi.transpose() * &phi / s2;
    let rhs = phi.transpose() * y / s2;
    let v = prec
        .cholesky()
        .ok_or_else(|| Error::DegenerateState("regression start is not positive definite".into()))?
        .solve(&rhs);
    let f_tilde = &block.factor.chol * v;
    let mean = &block.a * &f_tilde;
    let rss: f64 = y.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(MarginalState {
        f_tilde,
        w,
        sigma2: (rss / data.n() as f64).max(1e-4),
    })
}

/// Unconstrained calibration value matching the empirical Kendall τ of `u`.
fn calibration_start(family: CopulaFamily, u1: &[f64], u2: &[f64]) -> f64 {
    let tau = kendall_tau(u1, u2);
    let (lo, hi) = family.tau_range();
    let tau = tau.clamp(lo.max(-0.9) + 0.02, hi.min(0.9));
    family
        .theta_from_tau(tau)
        .map(|p| family.link(p))
        .unwrap_or(0.0)
        .clamp(-5.0, 5.0)
}

fn run_stage(sampler: &mut Sampler<'_>, stage: Stage, iters: usize, cfg: &SamplerConfig) -> Result<FullState> {
    let mut best = (sampler.stage_target(stage), sampler.state().clone());
    for t in 0..iters {
        sampler.sweep(stage)?;
        if (t + 1) % cfg.adapt_window == 0 {
            sampler.steps.end_window(cfg.target_accept, true);
        }
        let v = sampler.stage_target(stage);
        if v > best.0 {
            best = (v, sampler.state().clone());
        }
    }
    Ok(best.1)
}

/// The three short initialization chains: margin 1, margin 2, then the
/// calibration with margins frozen. Each keeps its highest-target state.
pub fn init_pipeline(
    data: &Dataset,
    sets: &InducingSets,
    spec: &ModelSpec,
    config: &SamplerConfig,
    rng: ChaCha8Rng,
) -> Result<(FullState, StepSizes, ChaCha8Rng)> {
    let margins = if spec.uniform_margins {
        Margins::Uniform
    } else {
        Margins::Gaussian {
            margins: [regression_start(data, sets, 0)?, regression_start(data, sets, 1)?],
        }
    };
    let placeholder = FullState {
        margins,
        calib: CalibrationState::Constant { eta: 0.0 },
        family: spec.family,
    };
    let mut sampler = Sampler::new(data, sets, placeholder, StepSizes::default(), rng)?;
    if !spec.uniform_margins {
        for j in 0..2 {
            let best = run_stage(&mut sampler, Stage::Margin(j), config.init_iters, config)?;
            sampler.set_state(best)?;
        }
    }

    let (u1, u2) = match &sampler.state().margins {
        Margins::Uniform => (data.y1.as_slice().to_vec(), data.y2.as_slice().to_vec()),
        Margins::Gaussian { margins } => {
            let mut us = Vec::with_capacity(2);
            for (j, m) in margins.iter().enumerate() {
                let mean = marginal_means(&data.x, m, sets.margin(j)?)?;
                us.push(margin_terms(data.y(j), &mean, m.sigma2).1);
            }
            let u2 = us.pop().unwrap();
            (us.pop().unwrap(), u2)
        }
    };
    let c = calibration_start(spec.family, &u1, &u2);
    let margins = sampler.state().margins.clone();
    let with_calib = |calib: CalibrationState| FullState {
        margins: margins.clone(),
        calib,
        family: spec.family,
    };
    // short length-scale start for the calibration GP
    let w0 = KernelParams(vec![0.0, -3.0]);
    match spec.calibration {
        CalibrationKind::Constant => {
            sampler.set_state(with_calib(CalibrationState::Constant { eta: c }))?;
        }
        CalibrationKind::SingleCovariate { index } => {
            let m = sets.calibration()?.len();
            sampler.set_state(with_calib(CalibrationState::SingleCovariate {
                index,
                f_tilde: DVector::from_element(m, c),
                w: w0.clone(),
            }))?;
        }
        CalibrationKind::GpSim => {
            // a handful of starting directions, each given a short run
            let q = data.q();
            let m = sets.calibration()?.len();
            let mut candidates: Vec<DVector<f64>> = (0..q)
                .map(|k| {
                    let mut e = DVector::zeros(q);
                    e[k] = 1.0;
                    e
                })
                .collect();
            candidates.push(DVector::from_element(q, 1.0 / (q as f64).sqrt()));
            for _ in 0..4 {
                let v = sample_vmf(&DVector::from_element(q, 1.0 / (q as f64).sqrt()), 0.0, &mut sampler.rng);
                candidates.push(v);
            }
            let probe = (config.init_iters / 6).max(5);
            let mut best: Option<(f64, FullState)> = None;
            for beta in candidates {
                sampler.set_state(with_calib(CalibrationState::GpSim {
                    beta,
                    f_tilde: DVector::from_element(m, c),
                    w: w0.clone(),
                }))?;
                let st = run_stage(&mut sampler, Stage::Calibration, probe, config)?;
                sampler.set_state(st.clone())?;
                let v = sampler.stage_target(Stage::Calibration);
                if best.as_ref().is_none_or(|b| v > b.0) {
                    best = Some((v, st));
                }
            }
            sampler.set_state(best.unwrap().1)?;
        }
    }
    let best = run_stage(&mut sampler, Stage::Calibration, config.init_iters, config)?;
    sampler.set_state(best)?;
    let (state, steps, rng) = sampler.into_parts();
    Ok((state, steps, rng))
}

/// Builds the inducing sets for `spec` from the configuration.
pub fn build_sets(data: &Dataset, spec: &ModelSpec, config: &SamplerConfig) -> Result<InducingSets> {
    InducingSets::build(data, spec, config.m1, config.m2, config.m, mix_seed(config.seed, 0x1D))
}

/// Runs initialization and the main chain.
pub fn run_chain(data: &Dataset, spec: &ModelSpec, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    spec.validate(data)?;
    let sets = build_sets(data, spec, config)?;
    run_chain_with_sets(data, spec, config, sets)
}

pub fn run_chain_with_sets(
    data: &Dataset,
    spec: &ModelSpec,
    config: &SamplerConfig,
    sets: InducingSets,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (state, mut steps, rng) = init_pipeline(data, &sets, spec, config, rng)?;
    steps.restart();
    let mut sampler = Sampler::new(data, &sets, state, steps, rng)?;
    let kept = (config.iters - config.burn_in).div_ceil(config.thin);
    let mut states = Vec::with_capacity(kept);
    let mut log_posterior = Vec::with_capacity(kept);
    for t in 0..config.iters {
        sampler.sweep(Stage::Full).map_err(|e| match e {
            Error::NonFinite { what, obs, .. } => Error::NonFinite { what, obs, draw: t },
            e => e,
        })?;
        if t < config.burn_in && (t + 1) % config.adapt_window == 0 {
            sampler.steps.end_window(config.target_accept, true);
        }
        if t + 1 == config.burn_in {
            sampler.steps.reset_counts();
        }
        if t >= config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            let lp = sampler.log_posterior();
            if !lp.is_finite() {
                return Err(Error::NonFinite {
                    what: "log-posterior",
                    obs: 0,
                    draw: t,
                });
            }
            states.push(sampler.state().clone());
            log_posterior.push(lp);
        }
    }
    let steps = &sampler.steps;
    let mut acceptance = BTreeMap::new();
    let mut step_sizes = BTreeMap::new();
    let mut put = |name: &str, a: &adapt::Adapter, tuned: bool| {
        if let Some(r) = a.acceptance_rate() {
            acceptance.insert(name.to_string(), r);
            if tuned {
                step_sizes.insert(name.to_string(), a.scale());
            }
        }
    };
    put("w1", &steps.w[0], true);
    put("w2", &steps.w[1], true);
    put("w", &steps.w[2], true);
    put("beta", &steps.kappa, true);
    put("eta", &steps.eta, true);
    put("sigma2_1", &steps.sigma2[0], false);
    put("sigma2_2", &steps.sigma2[1], false);
    Ok(PosteriorDraws {
        spec: *spec,
        config: config.clone(),
        sets,
        states,
        log_posterior,
        acceptance,
        step_sizes,
    })
}

/// A draw from the full prior; used to compare against the initializer.
pub fn prior_draw<R: Rng + ?Sized>(
    data: &Dataset,
    sets: &InducingSets,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<FullState> {
    use rand_distr::{Distribution, Gamma, Normal};
    let wn = Normal::new(0.0, crate::model::W_PRIOR_VAR.sqrt()).unwrap();
    let ig = Gamma::new(crate::model::IG_SHAPE, 1.0 / crate::model::IG_RATE).unwrap();
    let margins = if spec.uniform_margins {
        Margins::Uniform
    } else {
        let mut ms = Vec::with_capacity(2);
        for j in 0..2 {
            let w = KernelParams((0..=data.q()).map(|_| wn.sample(rng)).collect());
            let f_tilde = GpFactor::new(sets.margin(j)?, &w)?.sample(rng);
            let sigma2 = (1.0 / ig.sample(rng)).clamp(1e-6, 1e6);
            ms.push(MarginalState { f_tilde, w, sigma2 });
        }
        let m1 = ms.pop().unwrap();
        Margins::Gaussian {
            margins: [ms.pop().unwrap(), m1],
        }
    };
    let calib = match spec.calibration {
        CalibrationKind::Constant => CalibrationState::Constant {
            eta: Normal::new(0.0, crate::model::ETA_PRIOR_VAR.sqrt()).unwrap().sample(rng),
        },
        kind => {
            let w = KernelParams(vec![wn.sample(rng), wn.sample(rng)]);
            let f_tilde = GpFactor::new(sets.calibration()?, &w)?.sample(rng);
            match kind {
                CalibrationKind::GpSim => {
                    let q = data.q();
                    let beta = sample_vmf(&DVector::from_element(q, 1.0 / (q as f64).sqrt()), 0.0, rng);
                    CalibrationState::GpSim { beta, f_tilde, w }
                }
                CalibrationKind::SingleCovariate { index } => CalibrationState::SingleCovariate { index, f_tilde, w },
                CalibrationKind::Constant => unreachable!(),
            }
        }
    };
    Ok(FullState {
        margins,
        calib,
        family: spec.family,
    })
}

/// Interpolation matrix for a calibration GP at new inputs; exposed for
/// prediction code that reuses a single factorization per draw.
pub fn calibration_interp(
    x: &DMatrix<f64>,
    calib: &CalibrationState,
    sets: &InducingSets,
) -> Result<Option<DMatrix<f64>>> {
    match calib {
        CalibrationState::Constant { .. } => Ok(None),
        CalibrationState::GpSim { w, .. } | CalibrationState::SingleCovariate { w, .. } => {
            let input = crate::model::calibration_inputs(x, calib)?.expect("GP calibration");
            Ok(Some(interp_matrix(&input, sets.calibration()?, w)?.a))
        }
    }
}
