//! Numerical helpers shared across the crate: normal and Student-t
//! transforms, Gauss–Legendre quadrature, log-space reductions and a few
//! sample statistics.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::{erfc, erfc_inv};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // one Newton step against the erfc-based CDF
    let err = if x > 0.0 {
        (1.0 - p) - norm_cdf(-x)
    } else {
        p - norm_cdf(x)
    };
    let step = err / (norm_logpdf(x)).exp();
    if x > 0.0 {
        x - step
    } else {
        x + step
    }
}

#[inline]
pub fn norm_logpdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

fn students_t(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom")
}

pub fn t_cdf(x: f64, dof: f64) -> f64 {
    students_t(dof).cdf(x)
}

pub fn t_quantile(p: f64, dof: f64) -> f64 {
    students_t(dof).inverse_cdf(p)
}

/// Log density of the standard Student-t distribution.
pub fn t_logpdf(x: f64, dof: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma((dof + 1.0) / 2.0)
        - ln_gamma(dof / 2.0)
        - 0.5 * (dof * PI).ln()
        - (dof + 1.0) / 2.0 * (x * x / dof).ln_1p()
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln((1/n) Σ exp(x_i))`, stable for large magnitudes.
pub fn log_mean_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pnm1) = (p1, p0);
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

fn gl15() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(15))
}

fn apply_rule(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Fixed 64-node Gauss–Legendre integral of `f` over `[a, b]`.
pub fn integrate_gl64(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    apply_rule(gl64(), a, b, &mut f)
}

/// Adaptive Gauss–Legendre quadrature. Each panel is compared against the sum
/// of its two halves and split until the difference is below
/// `max(abs_tol, rel_tol * |estimate|)`.
pub fn integrate_adaptive(
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    fn recurse(
        a: f64,
        b: f64,
        whole: f64,
        rel_tol: f64,
        abs_tol: f64,
        depth: u32,
        f: &mut impl FnMut(f64) -> f64,
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = apply_rule(gl15(), a, mid, f);
        let right = apply_rule(gl15(), mid, b, f);
        let both = left + right;
        if depth == 0 || (both - whole).abs() <= abs_tol.max(rel_tol * both.abs()) {
            return both;
        }
        recurse(a, mid, left, rel_tol, abs_tol * 0.5, depth - 1, f)
            + recurse(mid, b, right, rel_tol, abs_tol * 0.5, depth - 1, f)
    }
    let whole = apply_rule(gl15(), a, b, &mut f);
    recurse(a, b, whole, rel_tol, abs_tol, 20, &mut f)
}

/// Bisection for an increasing function: returns x in [lo, hi] with
/// `f(x) ≈ target`, stopping when the bracket is narrower than `tol`.
pub fn bisect_increasing(
    mut lo: f64,
    mut hi: f64,
    target: f64,
    tol: f64,
    f: impl Fn(f64) -> f64,
) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < tol {
            return mid;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sample Kendall tau (tau-a), O(n²).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let p = (a[i] - a[j]) * (b[i] - b[j]);
            if p > 0.0 {
                s += 1;
            } else if p < 0.0 {
                s -= 1;
            }
        }
    }
    s as f64 / (n as f64 * (n as f64 - 1.0) / 2.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with denominator `n - ddof`.
pub fn variance(xs: &[f64], ddof: usize) -> f64 {
    let n = xs.len();
    if n <= ddof {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - ddof) as f64
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// SplitMix64 finaliser; used to derive independent child seeds.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
