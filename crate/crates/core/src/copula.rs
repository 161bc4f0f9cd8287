//! Bivariate copula families: densities, CDFs, h-functions, link functions,
//! Kendall's tau conversions, conditional samplers and conditional
//! expectations.
//!
//! All arguments on the unit interval are clamped to
//! `[U_EPS, 1 - U_EPS]` before evaluation so that log-densities stay
//! finite at extreme pseudo-observations. Clayton and Frank parameters with
//! `|θ| <= INDEPENDENCE_EPS` are evaluated with the independence copula.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    bisect_increasing, integrate_adaptive, integrate_gl64, log_add_exp, norm_cdf, norm_quantile,
    t_cdf, t_logpdf, t_quantile,
};

pub const U_EPS: f64 = 1e-10;
pub const INDEPENDENCE_EPS: f64 = 1e-8;
/// Largest admissible |θ| for Clayton, Frank and Gumbel after the inverse link.
pub const THETA_MAX: f64 = 1e4;
/// Largest admissible |ρ| for the elliptical families after the inverse link.
pub const RHO_MAX: f64 = 1.0 - 1e-10;

const T3_DOF: f64 = 3.0;

#[inline]
fn clamp_u(u: f64) -> f64 {
    u.clamp(U_EPS, 1.0 - U_EPS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Clayton,
    Frank,
    Gaussian,
    Gumbel,
    /// Student-t copula with three degrees of freedom.
    T3,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 5] = [
        CopulaFamily::Clayton,
        CopulaFamily::Frank,
        CopulaFamily::Gaussian,
        CopulaFamily::Gumbel,
        CopulaFamily::T3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::T3 => "t3",
        }
    }

    /// Validated parameter. Frank accepts `θ = 0` as its continuous
    /// independence extension.
    pub fn param(self, theta: f64) -> Result<CopulaParam> {
        let ok = theta.is_finite()
            && match self {
                CopulaFamily::Clayton => theta > 0.0,
                CopulaFamily::Frank => true,
                CopulaFamily::Gaussian | CopulaFamily::T3 => theta.abs() < 1.0,
                CopulaFamily::Gumbel => theta >= 1.0,
            };
        if ok {
            Ok(CopulaParam {
                family: self,
                theta,
            })
        } else {
            Err(Error::ParamDomain {
                family: self.name(),
                theta,
            })
        }
    }

    /// The parameter at (or, for Clayton, next to) independence.
    pub fn independence(self) -> CopulaParam {
        let theta = match self {
            CopulaFamily::Clayton => INDEPENDENCE_EPS,
            CopulaFamily::Frank | CopulaFamily::Gaussian | CopulaFamily::T3 => 0.0,
            CopulaFamily::Gumbel => 1.0,
        };
        CopulaParam {
            family: self,
            theta,
        }
    }

    /// Maps the unconstrained calibration scale to the copula parameter.
    pub fn inv_link(self, f: f64) -> CopulaParam {
        let theta = match self {
            CopulaFamily::Clayton => f.exp_m1().clamp(INDEPENDENCE_EPS, THETA_MAX),
            CopulaFamily::Frank => f.clamp(-THETA_MAX, THETA_MAX),
            CopulaFamily::Gaussian | CopulaFamily::T3 => (0.5 * f).tanh().clamp(-RHO_MAX, RHO_MAX),
            CopulaFamily::Gumbel => (f.exp() + 1.0).min(THETA_MAX),
        };
        CopulaParam {
            family: self,
            theta,
        }
    }

    /// Inverse of [`CopulaFamily::inv_link`] on the interior of the domain.
    pub fn link(self, param: CopulaParam) -> f64 {
        let t = param.theta;
        match self {
            CopulaFamily::Clayton => t.ln_1p(),
            CopulaFamily::Frank => t,
            CopulaFamily::Gaussian | CopulaFamily::T3 => 2.0 * t.atanh(),
            CopulaFamily::Gumbel => (t - 1.0).ln().max(-700.0),
        }
    }

    /// Open interval of Kendall's tau values the family can reach.
    pub fn tau_range(self) -> (f64, f64) {
        match self {
            CopulaFamily::Clayton | CopulaFamily::Gumbel => (0.0, 1.0),
            _ => (-1.0, 1.0),
        }
    }

    pub fn theta_from_tau(self, tau: f64) -> Result<CopulaParam> {
        let (lo, hi) = self.tau_range();
        let unattainable = Error::UnattainableTau {
            family: self.name(),
            tau,
        };
        if !tau.is_finite() || tau < lo || tau >= hi || tau <= -1.0 {
            return Err(unattainable);
        }
        let theta = match self {
            CopulaFamily::Clayton => (2.0 * tau / (1.0 - tau)).max(INDEPENDENCE_EPS),
            CopulaFamily::Gumbel => 1.0 / (1.0 - tau),
            CopulaFamily::Gaussian | CopulaFamily::T3 => (std::f64::consts::FRAC_PI_2 * tau).sin(),
            CopulaFamily::Frank => frank_theta_from_tau(tau).ok_or(unattainable)?,
        };
        self.param(theta)
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clayton" => Ok(CopulaFamily::Clayton),
            "frank" => Ok(CopulaFamily::Frank),
            "gaussian" | "normal" => Ok(CopulaFamily::Gaussian),
            "gumbel" => Ok(CopulaFamily::Gumbel),
            "t3" | "t-3" | "t" => Ok(CopulaFamily::T3),
            other => Err(Error::Config(format!("unknown copula family '{other}'"))),
        }
    }
}

/// A copula parameter known to lie inside its family's domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaParam {
    family: CopulaFamily,
    theta: f64,
}

/// One calibration value expressed on all three scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationValue {
    pub f: f64,
    pub theta: f64,
    pub tau: f64,
}

impl CalibrationValue {
    pub fn from_f(family: CopulaFamily, f: f64) -> Self {
        let p = family.inv_link(f);
        CalibrationValue {
            f,
            theta: p.theta,
            tau: p.tau(),
        }
    }
}

impl CopulaParam {
    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn is_independence(&self) -> bool {
        match self.family {
            CopulaFamily::Clayton | CopulaFamily::Frank => self.theta.abs() <= INDEPENDENCE_EPS,
            CopulaFamily::Gaussian | CopulaFamily::T3 => self.theta == 0.0,
            CopulaFamily::Gumbel => self.theta - 1.0 < 1e-14,
        }
    }

    /// `log c(u1, u2; θ)`.
    pub fn log_density(&self, u1: f64, u2: f64) -> f64 {
        if self.is_independence() {
            return 0.0;
        }
        let (u1, u2) = (clamp_u(u1), clamp_u(u2));
        let t = self.theta;
        match self.family {
            CopulaFamily::Clayton => {
                let (l1, l2) = (u1.ln(), u2.ln());
                t.ln_1p() - (1.0 + t) * (l1 + l2) - (2.0 + 1.0 / t) * clayton_log_sum(t, l1, l2)
            }
            CopulaFamily::Frank => {
                if t > 0.0 {
                    frank_log_density(t, u1, u2)
                } else {
                    frank_log_density(-t, 1.0 - u1, u2)
                }
            }
            CopulaFamily::Gaussian => {
                let (x, y) = (norm_quantile(u1), norm_quantile(u2));
                let r2 = 1.0 - t * t;
                -0.5 * r2.ln() - (t * t * (x * x + y * y) - 2.0 * t * x * y) / (2.0 * r2)
            }
            CopulaFamily::Gumbel => {
                let (x, y) = (-u1.ln(), -u2.ln());
                let (lx, ly) = (x.ln(), y.ln());
                let ln_a = log_add_exp(t * lx, t * ly);
                let a_pow = (ln_a / t).exp();
                -a_pow + x + y + (t - 1.0) * (lx + ly) + (2.0 / t - 2.0) * ln_a
                    + ((t - 1.0) / a_pow).ln_1p()
            }
            CopulaFamily::T3 => {
                let nu = T3_DOF;
                let (x, y) = (t_quantile(u1, nu), t_quantile(u2, nu));
                let r2 = 1.0 - t * t;
                let q = (x * x + y * y - 2.0 * t * x * y) / (nu * r2);
                // Γ(5/2)/Γ(3/2) = 3/2
                let ln_joint = (1.5f64).ln()
                    - (nu * std::f64::consts::PI).ln()
                    - 0.5 * r2.ln()
                    - (nu + 2.0) / 2.0 * q.ln_1p();
                ln_joint - t_logpdf(x, nu) - t_logpdf(y, nu)
            }
        }
    }

    pub fn density(&self, u1: f64, u2: f64) -> f64 {
        self.log_density(u1, u2).exp()
    }

    /// Copula distribution function `C(u1, u2; θ)`.
    pub fn cdf(&self, u1: f64, u2: f64) -> f64 {
        if u1 <= 0.0 || u2 <= 0.0 {
            return 0.0;
        }
        if u1 >= 1.0 {
            return u2.min(1.0);
        }
        if u2 >= 1.0 {
            return u1;
        }
        if self.is_independence() {
            return u1 * u2;
        }
        let t = self.theta;
        let c = match self.family {
            CopulaFamily::Clayton => {
                let (u1, u2) = (clamp_u(u1), clamp_u(u2));
                (-clayton_log_sum(t, u1.ln(), u2.ln()) / t).exp()
            }
            CopulaFamily::Frank => {
                let (u1c, u2c) = (clamp_u(u1), clamp_u(u2));
                if t > 0.0 {
                    frank_cdf(t, u1c, u2c)
                } else {
                    u2 - frank_cdf(-t, clamp_u(1.0 - u1), u2c)
                }
            }
            CopulaFamily::Gumbel => {
                let (x, y) = (-clamp_u(u1).ln(), -clamp_u(u2).ln());
                let ln_a = log_add_exp(t * x.ln(), t * y.ln());
                (-(ln_a / t).exp()).exp()
            }
            CopulaFamily::Gaussian | CopulaFamily::T3 => {
                integrate_adaptive(0.0, u2, 1e-12, 1e-14, |v| self.h(u1, v))
            }
        };
        c.clamp((u1 + u2 - 1.0).max(0.0), u1.min(u2))
    }

    /// `P(U1 <= u1 | U2 = u2) = ∂C/∂u2`.
    pub fn h(&self, u1: f64, u2: f64) -> f64 {
        if u1 <= 0.0 {
            return 0.0;
        }
        if u1 >= 1.0 {
            return 1.0;
        }
        if self.is_independence() {
            return u1;
        }
        let u2 = clamp_u(u2);
        let u1c = clamp_u(u1);
        let t = self.theta;
        let h = match self.family {
            CopulaFamily::Clayton => {
                let (l1, l2) = (u1c.ln(), u2.ln());
                ((-t - 1.0) * l2 - (1.0 + 1.0 / t) * clayton_log_sum(t, l1, l2)).exp()
            }
            CopulaFamily::Frank => {
                if t > 0.0 {
                    frank_h(t, u1c, u2)
                } else {
                    1.0 - frank_h(-t, clamp_u(1.0 - u1), u2)
                }
            }
            CopulaFamily::Gaussian => {
                let (x, y) = (norm_quantile(u1c), norm_quantile(u2));
                norm_cdf((x - t * y) / (1.0 - t * t).sqrt())
            }
            CopulaFamily::Gumbel => {
                let (x, y) = (-u1c.ln(), -u2.ln());
                let ln_a = log_add_exp(t * x.ln(), t * y.ln());
                let ln_c = -(ln_a / t).exp();
                (ln_c + (1.0 / t - 1.0) * ln_a + (t - 1.0) * y.ln() + y).exp()
            }
            CopulaFamily::T3 => {
                let nu = T3_DOF;
                let (x, y) = (t_quantile(u1c, nu), t_quantile(u2, nu));
                let scale = ((nu + y * y) * (1.0 - t * t) / (nu + 1.0)).sqrt();
                t_cdf((x - t * y) / scale, nu + 1.0)
            }
        };
        h.clamp(0.0, 1.0)
    }

    /// Inverse of the h-function in its first argument: the `u1` with
    /// `h(u1, u2) = v`.
    pub fn h_inv(&self, v: f64, u2: f64) -> f64 {
        if self.is_independence() {
            return v;
        }
        let v = clamp_u(v);
        let u2 = clamp_u(u2);
        let t = self.theta;
        let u1 = match self.family {
            CopulaFamily::Clayton => {
                let p = -t * u2.ln();
                let q = (-t / (1.0 + t) * v.ln()).exp_m1();
                let lq = q.ln();
                let ln_s = if p + lq > 30.0 {
                    p + lq + (-(p + lq)).exp().ln_1p()
                } else {
                    (p.exp() * q).ln_1p()
                };
                (-ln_s / t).exp()
            }
            CopulaFamily::Frank => {
                if t > 0.0 {
                    frank_h_inv(t, v, u2)
                } else {
                    1.0 - frank_h_inv(-t, 1.0 - v, u2)
                }
            }
            CopulaFamily::Gaussian => {
                let y = norm_quantile(u2);
                norm_cdf(t * y + (1.0 - t * t).sqrt() * norm_quantile(v))
            }
            CopulaFamily::T3 => {
                let nu = T3_DOF;
                let y = t_quantile(u2, nu);
                let scale = ((nu + y * y) * (1.0 - t * t) / (nu + 1.0)).sqrt();
                t_cdf(t * y + scale * t_quantile(v, nu + 1.0), nu)
            }
            CopulaFamily::Gumbel => bisect_increasing(0.0, 1.0, v, 1e-12, |u| self.h(u, u2)),
        };
        u1.clamp(0.0, 1.0)
    }

    /// Kendall's tau implied by this parameter.
    pub fn tau(&self) -> f64 {
        if self.is_independence() {
            return 0.0;
        }
        let t = self.theta;
        match self.family {
            CopulaFamily::Clayton => t / (t + 2.0),
            CopulaFamily::Frank => frank_tau(t),
            CopulaFamily::Gaussian | CopulaFamily::T3 => std::f64::consts::FRAC_2_PI * t.asin(),
            CopulaFamily::Gumbel => 1.0 - 1.0 / t,
        }
    }

    /// One draw `(u1, u2)` with `u2 ~ U(0,1)` and `u1 = h⁻¹(v | u2)`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u2: f64 = rng.random();
        let v: f64 = rng.random();
        (self.h_inv(v, u2), u2)
    }

    /// `E(U1 | U2 = u2) = ∫ z c(z, u2) dz` on a 64-node Gauss–Legendre rule.
    pub fn cond_expectation_u(&self, u2: f64) -> f64 {
        if self.is_independence() {
            return 0.5;
        }
        integrate_gl64(U_EPS, 1.0 - U_EPS, |z| z * self.density(z, u2))
    }

    /// `E(Y1 | Y2 = y2)` for Gaussian margins with means `f1, f2` and
    /// standard deviations `sigma1, sigma2`.
    pub fn cond_expectation_y(&self, f1: f64, f2: f64, sigma1: f64, sigma2: f64, y2: f64) -> f64 {
        if self.is_independence() {
            return f1;
        }
        let u2 = norm_cdf((y2 - f2) / sigma2);
        f1 + sigma1
            * integrate_gl64(U_EPS, 1.0 - U_EPS, |z| norm_quantile(z) * self.density(z, u2))
    }
}

/// `ln(u1^-θ + u2^-θ - 1)` from log-uniforms, without overflow.
fn clayton_log_sum(theta: f64, l1: f64, l2: f64) -> f64 {
    let a = -theta * l1;
    let b = -theta * l2;
    let m = a.max(b);
    if m < 0.5 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    }
}

/// `ln D` with `D = e^{-θu1}(1 - e^{-θu2}) + e^{-θu2}(1 - e^{-θ(1-u2)})`,
/// the cancellation-free form of the Frank denominator (θ > 0).
fn frank_log_denominator(t: f64, u1: f64, u2: f64) -> f64 {
    log_add_exp(
        -t * u1 + (-(-t * u2).exp_m1()).ln(),
        -t * u2 + (-(-t * (1.0 - u2)).exp_m1()).ln(),
    )
}

fn frank_log_density(t: f64, u1: f64, u2: f64) -> f64 {
    t.ln() + (-(-t).exp_m1()).ln() - t * (u1 + u2) - 2.0 * frank_log_denominator(t, u1, u2)
}

fn frank_cdf(t: f64, u1: f64, u2: f64) -> f64 {
    -(frank_log_denominator(t, u1, u2) - (-(-t).exp_m1()).ln()) / t
}

fn frank_h(t: f64, u1: f64, u2: f64) -> f64 {
    (-t * u2 + (-(-t * u1).exp_m1()).ln() - frank_log_denominator(t, u1, u2)).exp()
}

fn frank_h_inv(t: f64, v: f64, u2: f64) -> f64 {
    let v = clamp_u(v);
    let ln_num = log_add_exp(-t * u2 + (-v).ln_1p(), v.ln() - t);
    let ln_den = log_add_exp(-t * u2, v.ln() + (-(-t * u2).exp_m1()).ln());
    -(ln_num - ln_den) / t
}

/// Debye function of order one, `D1(x) = (1/x) ∫_0^x t/(e^t - 1) dt`, x > 0.
pub fn debye1(x: f64) -> f64 {
    let upper = x.min(80.0);
    let integral = integrate_adaptive(0.0, upper, 1e-13, 1e-16, |t| {
        if t == 0.0 {
            1.0
        } else {
            t / t.exp_m1()
        }
    });
    integral / x
}

fn frank_tau(theta: f64) -> f64 {
    let a = theta.abs();
    let tau = if a < 1e-2 {
        // series of 1 - (4/θ)(1 - D1(θ)) around zero
        a / 9.0 - a.powi(3) / 900.0 + a.powi(5) / 52920.0
    } else {
        1.0 - 4.0 / a * (1.0 - debye1(a))
    };
    tau.copysign(theta)
}

fn frank_theta_from_tau(tau: f64) -> Option<f64> {
    if tau.abs() < 1e-14 {
        return Some(0.0);
    }
    let target = tau.abs();
    let mut hi = 1.0;
    while frank_tau(hi) < target {
        hi *= 2.0;
        if hi > THETA_MAX {
            return None;
        }
    }
    let mut lo = 0.0;
    let mut mid = 0.5 * hi;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let err = frank_tau(mid) - target;
        if err.abs() < 1e-13 || hi - lo < 1e-14 * hi {
            break;
        }
        if err < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(mid.copysign(tau))
}
