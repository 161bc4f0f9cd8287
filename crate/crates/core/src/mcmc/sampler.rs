//! The Metropolis-within-Gibbs sampler state machine.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adapt::Adapter;
use super::ess::ess_step;
use super::vmf::sample_vmf;
use crate::error::{Error, Result};
use crate::gp::{interp_with_factor, GpFactor, KernelParams};
use crate::model::{
    calibration_inputs, copula_terms, inv_gamma_logpdf, margin_terms, normal_prior_logpdf,
    sphere_log_density, CalibrationState, Dataset, FullState, InducingSets, Margins, ETA_PRIOR_VAR,
    IG_RATE, IG_SHAPE, W_PRIOR_VAR,
};

/// Which conditional target the sweep runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Full,
    /// One marginal regression alone, copula ignored.
    Margin(usize),
    /// Calibration only, margins frozen.
    Calibration,
}

/// Proposal scales with their acceptance bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    /// RWM variances `c` for w1, w2 and the calibration w.
    pub w: [Adapter; 3],
    pub kappa: Adapter,
    /// RWM standard deviation for a constant calibration.
    pub eta: Adapter,
    /// Acceptance counters for the σ² independence proposals (never tuned).
    pub sigma2: [Adapter; 2],
}

impl Default for StepSizes {
    fn default() -> Self {
        let w = Adapter::new(0.05, 1e-6, 25.0, true);
        StepSizes {
            w: [w.clone(), w.clone(), w],
            kappa: Adapter::new(100.0, 1.0, 1e6, false),
            eta: Adapter::new(0.1, 1e-4, 10.0, true),
            sigma2: [Adapter::new(1.0, 1.0, 1.0, true), Adapter::new(1.0, 1.0, 1.0, true)],
        }
    }
}

impl StepSizes {
    fn all_mut(&mut self) -> impl Iterator<Item = &mut Adapter> {
        self.w
            .iter_mut()
            .chain(std::iter::once(&mut self.kappa))
            .chain(std::iter::once(&mut self.eta))
            .chain(self.sigma2.iter_mut())
    }

    pub fn end_window(&mut self, target: f64, adapt: bool) {
        for a in self.all_mut() {
            a.end_window(target, adapt);
        }
    }

    pub fn restart(&mut self) {
        for a in self.all_mut() {
            a.restart();
        }
    }

    pub fn reset_counts(&mut self) {
        for a in self.all_mut() {
            a.reset_counts();
        }
    }
}

#[derive(Clone, Debug)]
struct MarginCache {
    factor: GpFactor,
    a: DMatrix<f64>,
    mean: DVector<f64>,
    prior_lp: f64,
    lm: Vec<f64>,
    u: Vec<f64>,
}

#[derive(Clone, Debug)]
struct CalibCache {
    factor: GpFactor,
    input: DMatrix<f64>,
    a: DMatrix<f64>,
    prior_lp: f64,
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio
}

/// One chain: the current state plus everything derived from it.
pub struct Sampler<'a> {
    data: &'a Dataset,
    sets: &'a InducingSets,
    state: FullState,
    marg: Option<[MarginCache; 2]>,
    calib: Option<CalibCache>,
    eta: DVector<f64>,
    lc: Vec<f64>,
    pub steps: StepSizes,
    pub rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a Dataset,
        sets: &'a InducingSets,
        state: FullState,
        steps: StepSizes,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut s = Sampler {
            data,
            sets,
            state: state.clone(),
            marg: None,
            calib: None,
            eta: DVector::zeros(0),
            lc: Vec::new(),
            steps,
            rng,
        };
        s.set_state(state)?;
        Ok(s)
    }

    pub fn state(&self) -> &FullState {
        &self.state
    }

    pub fn into_parts(self) -> (FullState, StepSizes, ChaCha8Rng) {
        (self.state, self.steps, self.rng)
    }

    /// Replaces the state and rebuilds every cache.
    pub fn set_state(&mut self, state: FullState) -> Result<()> {
        let data = self.data;
        self.marg = match &state.margins {
            Margins::Uniform => None,
            Margins::Gaussian { margins } => {
                let mut caches = Vec::with_capacity(2);
                for (j, m) in margins.iter().enumerate() {
                    let z = self.sets.margin(j)?;
                    let factor = GpFactor::new(z, &m.w)?;
                    let prior_lp = factor.log_pdf(&m.f_tilde);
                    let block = interp_with_factor(&data.x, z, &m.w, factor)?;
                    let mean = &block.a * &m.f_tilde;
                    let (lm, u) = margin_terms(data.y(j), &mean, m.sigma2);
                    caches.push(MarginCache {
                        factor: block.factor,
                        a: block.a,
                        mean,
                        prior_lp,
                        lm,
                        u,
                    });
                }
                let c1 = caches.pop().unwrap();
                let c0 = caches.pop().unwrap();
                Some([c0, c1])
            }
        };
        match &state.calib {
            CalibrationState::Constant { eta } => {
                self.calib = None;
                self.eta = DVector::from_element(data.n(), *eta);
            }
            CalibrationState::GpSim { f_tilde, w, .. } | CalibrationState::SingleCovariate { f_tilde, w, .. } => {
                let z = self.sets.calibration()?;
                let input = calibration_inputs(&data.x, &state.calib)?.expect("GP calibration");
                let factor = GpFactor::new(z, w)?;
                let prior_lp = factor.log_pdf(f_tilde);
                let block = interp_with_factor(&input, z, w, factor)?;
                self.eta = &block.a * f_tilde;
                self.calib = Some(CalibCache {
                    factor: block.factor,
                    input,
                    a: block.a,
                    prior_lp,
                });
            }
        }
        self.state = state;
        self.refresh_copula();
        Ok(())
    }

    fn u(&self, j: usize) -> Vec<f64> {
        match &self.marg {
            Some(c) => c[j].u.clone(),
            None => self.data.y(j).iter().copied().collect(),
        }
    }

    fn u_ref(&self, j: usize) -> std::borrow::Cow<'_, [f64]> {
        match &self.marg {
            Some(c) => std::borrow::Cow::Borrowed(&c[j].u),
            None => std::borrow::Cow::Owned(self.u(j)),
        }
    }

    /// Recomputes the copula terms from the current uniforms and calibration.
    pub fn refresh_copula(&mut self) {
        self.lc = copula_terms(&self.u_ref(0), &self.u_ref(1), &self.eta, self.state.family);
    }

    pub fn copula_loglik(&self) -> f64 {
        sum(&self.lc)
    }

    pub fn margin_loglik(&self, j: usize) -> f64 {
        self.marg.as_ref().map_or(0.0, |c| sum(&c[j].lm))
    }

    pub fn loglik(&self) -> f64 {
        self.margin_loglik(0) + self.margin_loglik(1) + self.copula_loglik()
    }

    fn margin_prior(&self, j: usize) -> f64 {
        match (&self.marg, self.state.marginal(j)) {
            (Some(c), Some(m)) => {
                c[j].prior_lp + normal_prior_logpdf(&m.w.0, W_PRIOR_VAR) + inv_gamma_logpdf(m.sigma2, IG_SHAPE, IG_RATE)
            }
            _ => 0.0,
        }
    }

    fn calib_prior(&self) -> f64 {
        match &self.state.calib {
            CalibrationState::Constant { eta } => normal_prior_logpdf(&[*eta], ETA_PRIOR_VAR),
            CalibrationState::GpSim { beta, w, .. } => {
                self.calib.as_ref().map_or(0.0, |c| c.prior_lp)
                    + normal_prior_logpdf(&w.0, W_PRIOR_VAR)
                    + sphere_log_density(beta.len())
            }
            CalibrationState::SingleCovariate { w, .. } => {
                self.calib.as_ref().map_or(0.0, |c| c.prior_lp) + normal_prior_logpdf(&w.0, W_PRIOR_VAR)
            }
        }
    }

    pub fn log_posterior(&self) -> f64 {
        self.loglik() + self.margin_prior(0) + self.margin_prior(1) + self.calib_prior()
    }

    /// Log target of a stage (the parts that vary within it).
    pub fn stage_target(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Full => self.log_posterior(),
            Stage::Margin(j) => self.margin_loglik(j) + self.margin_prior(j),
            Stage::Calibration => self.copula_loglik() + self.calib_prior(),
        }
    }

    /// Current calibration values on the unconstrained scale.
    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    fn normal_vec(&mut self, d: usize, sd: f64) -> DVector<f64> {
        let rng = &mut self.rng;
        DVector::from_fn(d, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn update_w_margin(&mut self, j: usize, stage: Stage) -> bool {
        let Some(m) = self.state.marginal(j) else { return false };
        let c = self.steps.w[j].scale();
        let step = self.normal_vec(m.w.0.len(), c.sqrt());
        let m = self.state.marginal(j).unwrap();
        let w_new = KernelParams(m.w.0.iter().zip(step.iter()).map(|(a, b)| a + b).collect());
        let ok = self.try_w_margin(j, w_new, stage);
        self.steps.w[j].record(ok);
        ok
    }

    fn try_w_margin(&mut self, j: usize, w_new: KernelParams, stage: Stage) -> bool {
        let data = self.data;
        let Ok(z) = self.sets.margin(j) else { return false };
        let Ok(factor) = GpFactor::new(z, &w_new) else { return false };
        let m = self.state.marginal(j).unwrap();
        let Ok(block) = interp_with_factor(&data.x, z, &w_new, factor) else { return false };
        let cache = &self.marg.as_ref().unwrap()[j];
        let prior_lp = block.factor.log_pdf(&m.f_tilde);
        let mean = &block.a * &m.f_tilde;
        let (lm, u) = margin_terms(data.y(j), &mean, m.sigma2);
        let mut log_a = normal_prior_logpdf(&w_new.0, W_PRIOR_VAR) - normal_prior_logpdf(&m.w.0, W_PRIOR_VAR)
            + prior_lp
            - cache.prior_lp
            + sum(&lm)
            - sum(&cache.lm);
        let lc = (stage == Stage::Full).then(|| {
            let other = self.u_ref(1 - j);
            let (u1, u2) = if j == 0 { (&u[..], &other[..]) } else { (&other[..], &u[..]) };
            copula_terms(u1, u2, &self.eta, self.state.family)
        });
        if let Some(lc) = &lc {
            log_a += sum(lc) - sum(&self.lc);
        }
        if !accept(log_a, &mut self.rng) {
            return false;
        }
        self.state.marginal_mut(j).unwrap().w = w_new;
        self.marg.as_mut().unwrap()[j] = MarginCache {
            factor: block.factor,
            a: block.a,
            mean,
            prior_lp,
            lm,
            u,
        };
        if let Some(lc) = lc {
            self.lc = lc;
        }
        true
    }

    /// Log acceptance ratio of the σ² independence proposal after the
    /// Gaussian and proposal terms cancel: only copula terms remain.
    pub fn sigma2_log_ratio(&self, j: usize, proposal: f64) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let cache = &self.marg.as_ref().expect("Gaussian margins")[j];
        let (lm, u) = margin_terms(self.data.y(j), &cache.mean, proposal);
        let other = self.u_ref(1 - j);
        let (u1, u2) = if j == 0 { (&u[..], &other[..]) } else { (&other[..], &u[..]) };
        let lc = copula_terms(u1, u2, &self.eta, self.state.family);
        (sum(&lc) - sum(&self.lc), lm, u, lc)
    }

    /// Parameters `(shape, rate)` of the σ² proposal.
    pub fn sigma2_proposal(&self, j: usize) -> (f64, f64) {
        let cache = &self.marg.as_ref().expect("Gaussian margins")[j];
        let rss: f64 = self.data.y(j).iter().zip(cache.mean.iter()).map(|(y, m)| (y - m) * (y - m)).sum();
        (IG_SHAPE + self.data.n() as f64 / 2.0, IG_RATE + rss / 2.0)
    }

    pub fn update_sigma2(&mut self, j: usize, stage: Stage) -> bool {
        if self.marg.is_none() {
            return false;
        }
        let (shape, rate) = self.sigma2_proposal(j);
        let g = Gamma::new(shape, 1.0 / rate).expect("positive IG parameters");
        let proposal = 1.0 / g.sample(&mut self.rng);
        if !(proposal.is_finite() && proposal > 0.0) {
            self.steps.sigma2[j].record(false);
            return false;
        }
        let (log_a, lm, u, lc) = self.sigma2_log_ratio(j, proposal);
        let ok = if stage == Stage::Full {
            accept(log_a, &mut self.rng)
        } else {
            true
        };
        if ok {
            self.state.marginal_mut(j).unwrap().sigma2 = proposal;
            let c = &mut self.marg.as_mut().unwrap()[j];
            c.lm = lm;
            c.u = u;
            if stage == Stage::Full {
                self.lc = lc;
            }
        }
        self.steps.sigma2[j].record(ok);
        ok
    }

    pub fn update_w_calib(&mut self) -> bool {
        let Some((_, w)) = self.state.calib.latent() else { return false };
        let c = self.steps.w[2].scale();
        let d = w.0.len();
        let step = self.normal_vec(d, c.sqrt());
        let (f_tilde, w) = self.state.calib.latent().unwrap();
        let w_new = KernelParams(w.0.iter().zip(step.iter()).map(|(a, b)| a + b).collect());
        let ok = (|| {
            let z = self.sets.calibration().ok()?;
            let factor = GpFactor::new(z, &w_new).ok()?;
            let cache = self.calib.as_ref()?;
            let prior_lp = factor.log_pdf(f_tilde);
            let block = interp_with_factor(&cache.input, z, &w_new, factor).ok()?;
            let eta = &block.a * f_tilde;
            let lc = copula_terms(&self.u_ref(0), &self.u_ref(1), &eta, self.state.family);
            let log_a = normal_prior_logpdf(&w_new.0, W_PRIOR_VAR) - normal_prior_logpdf(&w.0, W_PRIOR_VAR)
                + prior_lp
                - cache.prior_lp
                + sum(&lc)
                - sum(&self.lc);
            Some((log_a, block, eta, lc, prior_lp))
        })();
        let ok = match ok {
            Some((log_a, block, eta, lc, prior_lp)) if accept(log_a, &mut self.rng) => {
                match &mut self.state.calib {
                    CalibrationState::GpSim { w, .. } | CalibrationState::SingleCovariate { w, .. } => *w = w_new,
                    CalibrationState::Constant { .. } => unreachable!(),
                }
                let cache = self.calib.as_mut().unwrap();
                cache.factor = block.factor;
                cache.a = block.a;
                cache.prior_lp = prior_lp;
                self.eta = eta;
                self.lc = lc;
                true
            }
            _ => false,
        };
        self.steps.w[2].record(ok);
        ok
    }

    pub fn update_beta(&mut self) -> bool {
        let CalibrationState::GpSim { beta, f_tilde, w } = &self.state.calib else { return false };
        let kappa = self.steps.kappa.scale();
        let beta_new = sample_vmf(beta, kappa, &mut self.rng);
        let data = self.data;
        let ok = (|| {
            let z = self.sets.calibration().ok()?;
            let cache = self.calib.as_ref()?;
            let input = DMatrix::from_column_slice(data.n(), 1, (&data.x * &beta_new).as_slice());
            let block = interp_with_factor(&input, z, w, cache.factor.clone()).ok()?;
            let eta = &block.a * f_tilde;
            let lc = copula_terms(&self.u_ref(0), &self.u_ref(1), &eta, self.state.family);
            Some((sum(&lc) - sum(&self.lc), input, block.a, eta, lc))
        })();
        let ok = match ok {
            Some((log_a, input, a, eta, lc)) if accept(log_a, &mut self.rng) => {
                if let CalibrationState::GpSim { beta, .. } = &mut self.state.calib {
                    *beta = beta_new;
                }
                let cache = self.calib.as_mut().unwrap();
                cache.input = input;
                cache.a = a;
                self.eta = eta;
                self.lc = lc;
                true
            }
            _ => false,
        };
        self.steps.kappa.record(ok);
        ok
    }

    pub fn update_eta_constant(&mut self) -> bool {
        let CalibrationState::Constant { eta } = self.state.calib else { return false };
        let sd = self.steps.eta.scale();
        let e_new = eta + sd * self.rng.sample::<f64, _>(StandardNormal);
        let eta_vec = DVector::from_element(self.data.n(), e_new);
        let lc = copula_terms(&self.u_ref(0), &self.u_ref(1), &eta_vec, self.state.family);
        let log_a = sum(&lc) - sum(&self.lc) + normal_prior_logpdf(&[e_new], ETA_PRIOR_VAR)
            - normal_prior_logpdf(&[eta], ETA_PRIOR_VAR);
        let ok = accept(log_a, &mut self.rng);
        if ok {
            self.state.calib = CalibrationState::Constant { eta: e_new };
            self.eta = eta_vec;
            self.lc = lc;
        }
        self.steps.eta.record(ok);
        ok
    }

    pub fn ess_margin(&mut self, j: usize, stage: Stage) {
        let Some(caches) = &self.marg else { return };
        let cache = &caches[j];
        let nu = cache.factor.sample(&mut self.rng);
        let with_copula = stage == Stage::Full;
        let current = sum(&cache.lm) + if with_copula { sum(&self.lc) } else { 0.0 };
        let other = self.u_ref(1 - j).into_owned();
        let (y, sigma2, family) = (self.data.y(j), self.state.marginal(j).unwrap().sigma2, self.state.family);
        let f = self.state.marginal(j).unwrap().f_tilde.clone();
        let eta = &self.eta;
        let a = &cache.a;
        let res = ess_step(
            &f,
            current,
            &nu,
            |cand| {
                let mean = a * cand;
                let (lm, u) = margin_terms(y, &mean, sigma2);
                let mut ll = sum(&lm);
                let lc = with_copula.then(|| {
                    let (u1, u2) = if j == 0 { (&u[..], &other[..]) } else { (&other[..], &u[..]) };
                    copula_terms(u1, u2, eta, family)
                });
                if let Some(lc) = &lc {
                    ll += sum(lc);
                }
                (ll, (mean, lm, u, lc))
            },
            &mut self.rng,
        );
        if let Some((f_new, _, (mean, lm, u, lc))) = res {
            let c = &mut self.marg.as_mut().unwrap()[j];
            c.prior_lp = c.factor.log_pdf(&f_new);
            c.mean = mean;
            c.lm = lm;
            c.u = u;
            if let Some(lc) = lc {
                self.lc = lc;
            }
            self.state.marginal_mut(j).unwrap().f_tilde = f_new;
        }
    }

    pub fn ess_calib(&mut self) {
        let Some(cache) = &self.calib else { return };
        let Some((f, _)) = self.state.calib.latent() else { return };
        let nu = cache.factor.sample(&mut self.rng);
        let u1 = self.u_ref(0).into_owned();
        let u2 = self.u_ref(1).into_owned();
        let family = self.state.family;
        let a = &cache.a;
        let res = ess_step(
            f,
            sum(&self.lc),
            &nu,
            |cand| {
                let eta = a * cand;
                let lc = copula_terms(&u1, &u2, &eta, family);
                (sum(&lc), (eta, lc))
            },
            &mut self.rng,
        );
        if let Some((f_new, _, (eta, lc))) = res {
            let c = self.calib.as_mut().unwrap();
            c.prior_lp = c.factor.log_pdf(&f_new);
            self.eta = eta;
            self.lc = lc;
            match &mut self.state.calib {
                CalibrationState::GpSim { f_tilde, .. } | CalibrationState::SingleCovariate { f_tilde, .. } => {
                    *f_tilde = f_new
                }
                CalibrationState::Constant { .. } => unreachable!(),
            }
        }
    }

    fn update_calibration_params(&mut self) {
        match self.state.calib {
            CalibrationState::Constant { .. } => {
                self.update_eta_constant();
            }
            _ => {
                self.update_w_calib();
            }
        }
    }

    /// One Metropolis-within-Gibbs sweep in the fixed block order
    /// w1, w2, w, σ1², σ2², β, f̃1, f̃2, f̃.
    pub fn sweep(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Full => {
                self.update_w_margin(0, stage);
                self.update_w_margin(1, stage);
                self.update_calibration_params();
                self.update_sigma2(0, stage);
                self.update_sigma2(1, stage);
                self.update_beta();
                self.ess_margin(0, stage);
                self.ess_margin(1, stage);
                self.ess_calib();
            }
            Stage::Margin(j) => {
                self.update_w_margin(j, stage);
                self.update_sigma2(j, stage);
                self.ess_margin(j, stage);
            }
            Stage::Calibration => {
                self.update_calibration_params();
                self.update_beta();
                self.ess_calib();
            }
        }
        let t = self.stage_target(stage);
        if !t.is_finite() {
            let bad = self
                .lc
                .iter()
                .position(|v| !v.is_finite())
                .unwrap_or(0);
            return Err(Error::NonFinite {
                what: "log-posterior",
                obs: bad,
                draw: 0,
            });
        }
        Ok(())
    }
}
