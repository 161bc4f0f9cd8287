//! The joint model: Gaussian marginal regressions with sparse-GP means, the
//! calibration function (GP single-index, constant, or GP on one covariate),
//! the joint log-likelihood and the log-prior.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::copula::CopulaFamily;
use crate::error::{Error, Result};
use crate::gp::{
    inducing_grid_1d, inducing_unit_grid, interp_matrix, select_inducing_kmeans, GpFactor, InducingSet,
    KernelParams,
};
use crate::special::{norm_cdf, norm_logpdf};

pub use crate::data::{Dataset, Normalization};

/// Prior variance of every kernel hyper-parameter.
pub const W_PRIOR_VAR: f64 = 5.0;
/// Prior variance of the unconstrained constant calibration value.
pub const ETA_PRIOR_VAR: f64 = 5.0;
pub const IG_SHAPE: f64 = 0.1;
pub const IG_RATE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CalibrationKind {
    /// GP on the single index `xᵀβ`.
    GpSim,
    Constant,
    /// GP on one covariate (0-based column).
    SingleCovariate { index: usize },
}

impl fmt::Display for CalibrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationKind::GpSim => f.write_str("gpsim"),
            CalibrationKind::Constant => f.write_str("constant"),
            CalibrationKind::SingleCovariate { index } => write!(f, "single:{}", index + 1),
        }
    }
}

impl FromStr for CalibrationKind {
    type Err = Error;

    /// `gpsim`, `constant`, or `single:<k>` with `k` the 1-based covariate.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "gpsim" | "gp-sim" | "sim" => Ok(CalibrationKind::GpSim),
            "constant" | "const" => Ok(CalibrationKind::Constant),
            _ => {
                let k = s
                    .strip_prefix("single:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown calibration '{s}' (expected gpsim, constant or single:<k>)"
                        ))
                    })?;
                Ok(CalibrationKind::SingleCovariate { index: k - 1 })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: CopulaFamily,
    pub calibration: CalibrationKind,
    /// Responses are already on the copula scale; no marginal regressions.
    #[serde(default)]
    pub uniform_margins: bool,
}

impl ModelSpec {
    pub fn new(family: CopulaFamily, calibration: CalibrationKind) -> Self {
        ModelSpec {
            family,
            calibration,
            uniform_margins: false,
        }
    }

    pub fn with_uniform_margins(mut self, on: bool) -> Self {
        self.uniform_margins = on;
        self
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.calibration, self.family)
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if let CalibrationKind::SingleCovariate { index } = self.calibration {
            if index >= data.q() {
                return Err(Error::Config(format!(
                    "calibration covariate {} does not exist (q = {})",
                    index + 1,
                    data.q()
                )));
            }
        }
        if self.uniform_margins
            && data.y1.iter().chain(data.y2.iter()).any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Config(
                "uniform margins need responses inside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalState {
    pub f_tilde: DVector<f64>,
    pub w: KernelParams,
    pub sigma2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CalibrationState {
    GpSim {
        beta: DVector<f64>,
        f_tilde: DVector<f64>,
        w: KernelParams,
    },
    /// Constant calibration stored on the unconstrained scale.
    Constant { eta: f64 },
    SingleCovariate {
        index: usize,
        f_tilde: DVector<f64>,
        w: KernelParams,
    },
}

impl CalibrationState {
    pub fn kind(&self) -> CalibrationKind {
        match self {
            CalibrationState::GpSim { .. } => CalibrationKind::GpSim,
            CalibrationState::Constant { .. } => CalibrationKind::Constant,
            CalibrationState::SingleCovariate { index, .. } => CalibrationKind::SingleCovariate { index: *index },
        }
    }

    pub fn latent(&self) -> Option<(&DVector<f64>, &KernelParams)> {
        match self {
            CalibrationState::GpSim { f_tilde, w, .. } | CalibrationState::SingleCovariate { f_tilde, w, .. } => {
                Some((f_tilde, w))
            }
            CalibrationState::Constant { .. } => None,
        }
    }

    pub fn beta(&self) -> Option<&DVector<f64>> {
        match self {
            CalibrationState::GpSim { beta, .. } => Some(beta),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Margins {
    Uniform,
    Gaussian { margins: [MarginalState; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub margins: Margins,
    pub calib: CalibrationState,
    pub family: CopulaFamily,
}

impl FullState {
    pub fn marginal(&self, j: usize) -> Option<&MarginalState> {
        match &self.margins {
            Margins::Gaussian { margins } => Some(&margins[j]),
            Margins::Uniform => None,
        }
    }

    pub fn marginal_mut(&mut self, j: usize) -> Option<&mut MarginalState> {
        match &mut self.margins {
            Margins::Gaussian { margins } => Some(&mut margins[j]),
            Margins::Uniform => None,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.family,
            calibration: self.calib.kind(),
            uniform_margins: matches!(self.margins, Margins::Uniform),
        }
    }
}

/// Inducing inputs used by one fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducingSets {
    pub margins: Option<[InducingSet; 2]>,
    pub calib: Option<InducingSet>,
}

impl InducingSets {
    /// k-means centers for the marginals (the same seed for both, so equal
    /// counts give equal sets) and a grid for the calibration.
    pub fn build(data: &Dataset, spec: &ModelSpec, m1: usize, m2: usize, m: usize, seed: u64) -> Result<Self> {
        spec.validate(data)?;
        let margins = if spec.uniform_margins {
            None
        } else {
            let m1 = m1.min(data.n());
            let m2 = m2.min(data.n());
            Some([
                select_inducing_kmeans(&data.x, m1, seed)?,
                select_inducing_kmeans(&data.x, m2, seed)?,
            ])
        };
        let calib = match spec.calibration {
            CalibrationKind::GpSim => Some(inducing_grid_1d(data.q(), m)?),
            CalibrationKind::SingleCovariate { .. } => Some(inducing_unit_grid(m)?),
            CalibrationKind::Constant => None,
        };
        Ok(InducingSets { margins, calib })
    }

    pub fn margin(&self, j: usize) -> Result<&InducingSet> {
        self.margins
            .as_ref()
            .map(|m| &m[j])
            .ok_or_else(|| Error::Config("model has no marginal regressions".into()))
    }

    pub fn calibration(&self) -> Result<&InducingSet> {
        self.calib
            .as_ref()
            .ok_or_else(|| Error::Config("model has no calibration GP".into()))
    }
}

/// `A(X, Z; w) f̃` for one margin.
pub fn marginal_means(x: &DMatrix<f64>, marg: &MarginalState, z: &InducingSet) -> Result<DVector<f64>> {
    if marg.f_tilde.len() != z.len() {
        return Err(Error::Dimension(format!(
            "f_tilde of length {} for {} inducing points",
            marg.f_tilde.len(),
            z.len()
        )));
    }
    Ok(interp_matrix(x, z, &marg.w)?.interpolate(&marg.f_tilde))
}

/// The one-dimensional GP input for a calibration state: `Xβ` or a column.
pub fn calibration_inputs(x: &DMatrix<f64>, calib: &CalibrationState) -> Result<Option<DMatrix<f64>>> {
    match calib {
        CalibrationState::GpSim { beta, .. } => {
            if beta.len() != x.ncols() {
                return Err(Error::Dimension(format!(
                    "beta of length {} for {} covariates",
                    beta.len(),
                    x.ncols()
                )));
            }
            Ok(Some(DMatrix::from_column_slice(x.nrows(), 1, (x * beta).as_slice())))
        }
        CalibrationState::SingleCovariate { index, .. } => {
            if *index >= x.ncols() {
                return Err(Error::Dimension(format!("covariate {index} out of range")));
            }
            Ok(Some(DMatrix::from_column_slice(x.nrows(), 1, x.column(*index).as_slice())))
        }
        CalibrationState::Constant { .. } => Ok(None),
    }
}

/// Calibration function on the unconstrained scale at each row of `x`.
pub fn calibration_eta(x: &DMatrix<f64>, calib: &CalibrationState, z: Option<&InducingSet>) -> Result<DVector<f64>> {
    match calib {
        CalibrationState::Constant { eta } => Ok(DVector::from_element(x.nrows(), *eta)),
        CalibrationState::GpSim { f_tilde, w, .. } | CalibrationState::SingleCovariate { f_tilde, w, .. } => {
            let z = z.ok_or_else(|| Error::Config("calibration GP needs inducing inputs".into()))?;
            let input = calibration_inputs(x, calib)?.expect("GP calibration has inputs");
            Ok(interp_matrix(&input, z, w)?.interpolate(f_tilde))
        }
    }
}

/// Calibration values `(η_i, θ_i = g⁻¹(η_i))`.
pub fn calibration_values(
    x: &DMatrix<f64>,
    calib: &CalibrationState,
    z: Option<&InducingSet>,
    family: CopulaFamily,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let eta = calibration_eta(x, calib, z)?;
    let theta = eta.iter().map(|&e| family.inv_link(e).theta()).collect();
    Ok((eta, theta))
}

/// Per-observation Gaussian log-density and probability-integral transform.
pub fn margin_terms(y: &DVector<f64>, mean: &DVector<f64>, sigma2: f64) -> (Vec<f64>, Vec<f64>) {
    let s = sigma2.sqrt();
    let ls = s.ln();
    y.iter()
        .zip(mean.iter())
        .map(|(y, m)| {
            let r = (y - m) / s;
            (norm_logpdf(r) - ls, norm_cdf(r))
        })
        .unzip()
}

/// Per-observation copula log-densities.
pub fn copula_terms(u1: &[f64], u2: &[f64], eta: &DVector<f64>, family: CopulaFamily) -> Vec<f64> {
    u1.iter()
        .zip(u2)
        .zip(eta.iter())
        .map(|((&a, &b), &e)| family.inv_link(e).log_density(a, b))
        .collect()
}

/// Pointwise log-likelihood pieces for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseTerms {
    /// `log P(y1i, y2i | ω)`.
    pub joint: Vec<f64>,
    /// `log P(y1i | ω)` and `log P(y2i | ω)`; zero for uniform margins.
    pub marg: [Vec<f64>; 2],
}

/// Evaluates every term with given marginal means and calibration values.
pub fn pointwise_from_parts(
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    means: Option<([&DVector<f64>; 2], [f64; 2])>,
    eta: &DVector<f64>,
    family: CopulaFamily,
) -> PointwiseTerms {
    let n = y1.len();
    let (marg, u) = match means {
        Some((mu, s2)) => {
            let (l1, u1) = margin_terms(y1, mu[0], s2[0]);
            let (l2, u2) = margin_terms(y2, mu[1], s2[1]);
            ([l1, l2], [u1, u2])
        }
        None => (
            [vec![0.0; n], vec![0.0; n]],
            [y1.iter().copied().collect(), y2.iter().copied().collect()],
        ),
    };
    let cop = copula_terms(&u[0], &u[1], eta, family);
    let joint = (0..n).map(|i| marg[0][i] + marg[1][i] + cop[i]).collect();
    PointwiseTerms { joint, marg }
}

/// Pointwise terms for data `(y1, y2, x)` under a state.
pub fn pointwise_loglik(data: &Dataset, state: &FullState, sets: &InducingSets) -> Result<PointwiseTerms> {
    let eta = calibration_eta(&data.x, &state.calib, sets.calib.as_ref())?;
    let terms = match &state.margins {
        Margins::Uniform => pointwise_from_parts(&data.y1, &data.y2, None, &eta, state.family),
        Margins::Gaussian { margins } => {
            let m1 = marginal_means(&data.x, &margins[0], sets.margin(0)?)?;
            let m2 = marginal_means(&data.x, &margins[1], sets.margin(1)?)?;
            pointwise_from_parts(
                &data.y1,
                &data.y2,
                Some(([&m1, &m2], [margins[0].sigma2, margins[1].sigma2])),
                &eta,
                state.family,
            )
        }
    };
    if let Some(i) = terms.joint.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "log-likelihood",
            obs: i,
            draw: 0,
        });
    }
    Ok(terms)
}

pub fn joint_loglik(data: &Dataset, state: &FullState, sets: &InducingSets) -> Result<f64> {
    let total: f64 = pointwise_loglik(data, state, sets)?.joint.iter().sum();
    if !total.is_finite() {
        return Err(Error::DegenerateState("non-finite joint log-likelihood".into()));
    }
    Ok(total)
}

/// `log N(w; 0, var·I)`.
pub fn normal_prior_logpdf(w: &[f64], var: f64) -> f64 {
    w.iter()
        .map(|v| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - v * v / (2.0 * var))
        .sum()
}

/// Inverse-gamma log density, shape–rate form.
pub fn inv_gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// `-log(surface area of S^{q-1})`.
pub fn sphere_log_density(q: usize) -> f64 {
    let h = q as f64 / 2.0;
    -((2.0f64).ln() + h * std::f64::consts::PI.ln() - ln_gamma(h))
}

pub fn log_prior(state: &FullState, sets: &InducingSets) -> Result<f64> {
    let mut lp = 0.0;
    if let Margins::Gaussian { margins } = &state.margins {
        for (j, m) in margins.iter().enumerate() {
            if m.sigma2 <= 0.0 || !m.sigma2.is_finite() {
                return Err(Error::DegenerateState(format!(
                    "sigma2 of margin {} is {}",
                    j + 1,
                    m.sigma2
                )));
            }
            lp += GpFactor::new(sets.margin(j)?, &m.w)?.log_pdf(&m.f_tilde);
            lp += normal_prior_logpdf(&m.w.0, W_PRIOR_VAR);
            lp += inv_gamma_logpdf(m.sigma2, IG_SHAPE, IG_RATE);
        }
    }
    match &state.calib {
        CalibrationState::Constant { eta } => lp += normal_prior_logpdf(&[*eta], ETA_PRIOR_VAR),
        CalibrationState::GpSim { beta, f_tilde, w } => {
            lp += GpFactor::new(sets.calibration()?, w)?.log_pdf(f_tilde);
            lp += normal_prior_logpdf(&w.0, W_PRIOR_VAR);
            lp += sphere_log_density(beta.len());
        }
        CalibrationState::SingleCovariate { f_tilde, w, .. } => {
            lp += GpFactor::new(sets.calibration()?, w)?.log_pdf(f_tilde);
            lp += normal_prior_logpdf(&w.0, W_PRIOR_VAR);
        }
    }
    Ok(lp)
}

pub fn log_posterior(data: &Dataset, state: &FullState, sets: &InducingSets) -> Result<f64> {
    Ok(joint_loglik(data, state, sets)? + log_prior(state, sets)?)
}
