//! Sparse Gaussian-process machinery: squared-exponential kernel, the
//! interpolation matrix `A = K(X,Z)K(Z,Z)⁻¹`, the residual covariance,
//! inducing-point selection and the GP prior on inducing values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;
const KMEANS_ITERS: usize = 50;

/// Kernel hyper-parameters `w = (w0, w1, …, wd)`: `w0` is the log amplitude,
/// `ws` the log squared length-scale of input dimension `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams(pub Vec<f64>);

impl KernelParams {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::Dimension(format!(
                "kernel needs at least 2 parameters, got {}",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite kernel parameters {w:?}")));
        }
        Ok(KernelParams(w))
    }

    /// Same value for the amplitude and every length-scale entry.
    pub fn uniform(d: usize, amplitude: f64, length: f64) -> Self {
        let mut w = vec![length; d + 1];
        w[0] = amplitude;
        KernelParams(w)
    }

    pub fn input_dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
fn kernel_raw(xi: &[f64], xj: &[f64], amp: f64, inv_len: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..xi.len() {
        let d = xi[k] - xj[k];
        s += d * d * inv_len[k];
    }
    amp * (-s).exp()
}

/// `k(xi, xj; w) = e^{w0} exp(-Σ_s (xis - xjs)² / e^{ws})`.
pub fn kernel(xi: &[f64], xj: &[f64], w: &KernelParams) -> Result<f64> {
    if xi.len() != xj.len() || xi.len() != w.input_dim() {
        return Err(Error::Dimension(format!(
            "kernel inputs of length {} and {} with {} length-scales",
            xi.len(),
            xj.len(),
            w.input_dim()
        )));
    }
    let inv_len: Vec<f64> = w.0[1..].iter().map(|v| (-v).exp()).collect();
    Ok(kernel_raw(xi, xj, w.0[0].exp(), &inv_len))
}

/// Cross-covariance matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &KernelParams) -> Result<DMatrix<f64>> {
    let d = w.input_dim();
    if a.ncols() != d || b.ncols() != d {
        return Err(Error::Dimension(format!(
            "kernel matrix inputs have {} and {} columns, kernel expects {d}",
            a.ncols(),
            b.ncols()
        )));
    }
    let amp = w.0[0].exp();
    let inv_len: Vec<f64> = w.0[1..].iter().map(|v| (-v).exp()).collect();
    let rows_a: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    let rows_b: Vec<Vec<f64>> = (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        kernel_raw(&rows_a[i], &rows_b[j], amp, &inv_len)
    }))
}

/// Lower Cholesky factor of `K + jitter·I`, escalating the jitter by ×10 from
/// `1e-8·mean(diag K)` up to `1e-2·mean(diag K)`.
pub fn jittered_cholesky(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let m = k.nrows();
    let scale = (k.diagonal().sum() / m as f64).max(1e-300);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut kj = k.clone();
        for i in 0..m {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = kj.cholesky() {
            let l = ch.l();
            if l.iter().all(|v| v.is_finite()) {
                return Ok((l, jitter));
            }
        }
        rel *= 10.0;
    }
    Err(Error::Cholesky {
        jitter: JITTER_MAX * scale,
    })
}

/// Cholesky factor of the jittered inducing-point covariance.
#[derive(Clone, Debug)]
pub struct GpFactor {
    pub chol: DMatrix<f64>,
    pub jitter: f64,
    log_det: f64,
}

impl GpFactor {
    pub fn new(z: &InducingSet, w: &KernelParams) -> Result<Self> {
        let k = kernel_matrix(&z.points, &z.points, w)?;
        Self::from_cov(&k)
    }

    pub fn from_cov(k: &DMatrix<f64>) -> Result<Self> {
        let (chol, jitter) = jittered_cholesky(k)?;
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GpFactor {
            chol,
            jitter,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// `L⁻¹ v` by forward substitution.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `(K + jI)⁻¹ B` via two triangular solves.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .chol
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal");
        self.chol
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Log density of `N(f; 0, K + jI)`.
    pub fn log_pdf(&self, f: &DVector<f64>) -> f64 {
        let z = self.whiten(f);
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }

    /// Draw from `N(0, K + jI)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let e = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * e
    }
}

/// Interpolation matrix together with the factor it was built from.
#[derive(Clone, Debug)]
pub struct GPBlock {
    /// `n × m` matrix `K(X,Z)(K(Z,Z) + jI)⁻¹`.
    pub a: DMatrix<f64>,
    pub factor: GpFactor,
}

impl GPBlock {
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.factor.chol
    }

    pub fn interpolate(&self, f_tilde: &DVector<f64>) -> DVector<f64> {
        &self.a * f_tilde
    }
}

/// Builds `A = K(X,Z)[K(Z,Z) + jI]⁻¹` by Cholesky solves.
pub fn interp_matrix(x: &DMatrix<f64>, z: &InducingSet, w: &KernelParams) -> Result<GPBlock> {
    let factor = GpFactor::new(z, w)?;
    interp_with_factor(x, z, w, factor)
}

/// As [`interp_matrix`] with an already factored inducing covariance.
pub fn interp_with_factor(
    x: &DMatrix<f64>,
    z: &InducingSet,
    w: &KernelParams,
    factor: GpFactor,
) -> Result<GPBlock> {
    let kzx = kernel_matrix(&z.points, x, w)?;
    let a = factor.solve(&kzx).transpose();
    Ok(GPBlock { a, factor })
}

/// `B = K(Z*,Z*) - K(Z*,X)[K(X,X) + jI]⁻¹K(Z*,X)ᵀ`.
pub fn residual_cov(z_star: &DMatrix<f64>, x: &DMatrix<f64>, w: &KernelParams) -> Result<DMatrix<f64>> {
    let kxx = kernel_matrix(x, x, w)?;
    let factor = GpFactor::from_cov(&kxx)?;
    let kxs = kernel_matrix(x, z_star, w)?;
    let v = factor
        .chol
        .solve_lower_triangular(&kxs)
        .expect("Cholesky factor has a positive diagonal");
    let kss = kernel_matrix(z_star, z_star, w)?;
    let b = kss - v.transpose() * v;
    Ok((&b + b.transpose()) * 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InducingProvenance {
    KmeansCenters,
    Grid1d,
    UnitGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducingSet {
    pub points: DMatrix<f64>,
    pub provenance: InducingProvenance,
}

impl InducingSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

fn equally_spaced(lo: f64, hi: f64, m: usize) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::Config(format!("an inducing grid needs m >= 2, got {m}")));
    }
    Ok(DMatrix::from_fn(m, 1, |i, _| {
        if i == m - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (m - 1) as f64
        }
    }))
}

/// `m` equally spaced points spanning `[-√q, √q]`, the range of `xᵀβ` for
/// `x ∈ [0,1]^q` and `‖β‖ = 1`.
pub fn inducing_grid_1d(q: usize, m: usize) -> Result<InducingSet> {
    let r = (q as f64).sqrt();
    Ok(InducingSet {
        points: equally_spaced(-r, r, m)?,
        provenance: InducingProvenance::Grid1d,
    })
}

/// `m` equally spaced points spanning `[0, 1]`.
pub fn inducing_unit_grid(m: usize) -> Result<InducingSet> {
    Ok(InducingSet {
        points: equally_spaced(0.0, 1.0, m)?,
        provenance: InducingProvenance::UnitGrid,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by 50 Lloyd iterations.
pub fn select_inducing_kmeans(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<InducingSet> {
    let n = x.nrows();
    if m > n {
        return Err(Error::Config(format!(
            "cannot pick {m} inducing points from {n} observations"
        )));
    }
    if m == 0 {
        return Err(Error::Config("need at least one inducing point".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut distinct: Vec<Vec<f64>> = rows.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    let m = if distinct.len() < m {
        log::warn!(
            "only {} distinct covariate rows; using that many inducing points instead of {m}",
            distinct.len()
        );
        distinct.len()
    } else {
        m
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(m);
    centers.push(rows[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&d| d > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].clone();
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &c));
        }
        centers.push(c);
    }

    let d = x.ncols();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let best = (0..m)
                .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; m];
        let mut counts = vec![0usize; m];
        for (i, r) in rows.iter().enumerate() {
            counts[assign[i]] += 1;
            for k in 0..d {
                sums[assign[i]][k] += r[k];
            }
        }
        for c in 0..m {
            if counts[c] > 0 {
                for k in 0..d {
                    centers[c][k] = sums[c][k] / counts[c] as f64;
                }
            }
        }
    }

    Ok(InducingSet {
        points: DMatrix::from_fn(m, d, |i, k| centers[i][k]),
        provenance: InducingProvenance::KmeansCenters,
    })
}

/// `log N(f̃; 0, K(Z,Z;w) + jI)`.
pub fn gp_prior_logpdf(f_tilde: &DVector<f64>, z: &InducingSet, w: &KernelParams) -> Result<f64> {
    if f_tilde.len() != z.len() {
        return Err(Error::Dimension(format!(
            "latent vector of length {} for {} inducing points",
            f_tilde.len(),
            z.len()
        )));
    }
    Ok(GpFactor::new(z, w)?.log_pdf(f_tilde))
}

/// One draw from the GP prior on the inducing values.
pub fn sample_gp_prior<R: Rng + ?Sized>(z: &InducingSet, w: &KernelParams, rng: &mut R) -> Result<DVector<f64>> {
    Ok(GpFactor::new(z, w)?.sample(rng))
}
