//! Elliptical slice sampling for latent vectors with zero-mean Gaussian priors.

use nalgebra::DVector;
use rand::Rng;

use crate::gp::GpFactor;

const MAX_SHRINKS: usize = 1000;

/// One slice-sampling step along the ellipse through `f` and `nu`.
///
/// `loglik` returns the log-likelihood of a candidate together with any
/// by-products worth keeping. Returns `None` when the bracket collapses onto
/// the current point.
pub fn ess_step<R, T, F>(
    f: &DVector<f64>,
    current_ll: f64,
    nu: &DVector<f64>,
    mut loglik: F,
    rng: &mut R,
) -> Option<(DVector<f64>, f64, T)>
where
    R: Rng + ?Sized,
    F: FnMut(&DVector<f64>) -> (f64, T),
{
    let two_pi = 2.0 * std::f64::consts::PI;
    let log_y = current_ll + rng.random::<f64>().ln();
    let mut angle = rng.random::<f64>() * two_pi;
    let (mut lo, mut hi) = (angle - two_pi, angle);
    for _ in 0..MAX_SHRINKS {
        let cand = f * angle.cos() + nu * angle.sin();
        let (ll, extra) = loglik(&cand);
        if ll.is_finite() && ll >= log_y {
            return Some((cand, ll, extra));
        }
        if angle < 0.0 {
            lo = angle;
        } else {
            hi = angle;
        }
        if hi - lo < 1e-12 {
            return None;
        }
        angle = lo + rng.random::<f64>() * (hi - lo);
    }
    None
}

/// Full update: draws the auxiliary `nu` from the prior and slices.
/// Returns the new vector and its log-likelihood.
pub fn ess_update<R, F>(
    f: &DVector<f64>,
    current_ll: f64,
    prior: &GpFactor,
    mut loglik: F,
    rng: &mut R,
) -> (DVector<f64>, f64)
where
    R: Rng + ?Sized,
    F: FnMut(&DVector<f64>) -> f64,
{
    let nu = prior.sample(rng);
    match ess_step(f, current_ll, &nu, |c| (loglik(c), ()), rng) {
        Some((g, ll, ())) => (g, ll),
        None => (f.clone(), current_ll),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{inducing_unit_grid, KernelParams};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_likelihood_accepts_first_proposal_and_keeps_the_prior() {
        let z = inducing_unit_grid(3).unwrap();
        let w = KernelParams(vec![0.3, -1.0]);
        let prior = GpFactor::new(&z, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = prior.sample(&mut rng);
        let mut xs = Vec::new();
        for _ in 0..10_000 {
            let mut calls = 0;
            let (g, _) = ess_update(&f, 0.0, &prior, |_| {
                calls += 1;
                0.0
            }, &mut rng);
            assert_eq!(calls, 1);
            f = g;
            xs.push(f[0]);
        }
        let v = crate::special::variance(&xs, 1);
        let k11 = 0.3f64.exp();
        assert!((v / k11 - 1.0).abs() < 0.05, "{v} vs {k11}");
    }

    #[test]
    fn conjugate_gaussian_toy() {
        // prior N(0, K), likelihood N(y; f, s² I): posterior mean K (K + s² I)⁻¹ y
        let z = inducing_unit_grid(3).unwrap();
        let w = KernelParams(vec![0.0, -1.5]);
        let prior = GpFactor::new(&z, &w).unwrap();
        let k = &prior.chol * prior.chol.transpose();
        let y = DVector::from_vec(vec![0.8, -0.3, 0.5]);
        let s2 = 0.25;
        let post_cov = &k - &k * (&k + DMatrix::identity(3, 3) * s2).try_inverse().unwrap() * &k;
        let post_mean = &k * (&k + DMatrix::identity(3, 3) * s2).try_inverse().unwrap() * &y;
        let ll = |f: &DVector<f64>| -0.5 * (f - &y).norm_squared() / s2;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = DVector::zeros(3);
        let mut cur = ll(&f);
        let (burn, n) = (500, 20_000);
        let mut traces: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
        for t in 0..burn + n {
            let (g, l) = ess_update(&f, cur, &prior, ll, &mut rng);
            f = g;
            cur = l;
            if t >= burn {
                for i in 0..3 {
                    traces[i].push(f[i]);
                }
            }
        }
        for i in 0..3 {
            let mean = crate::special::mean(&traces[i]);
            // batch means absorb the autocorrelation
            let batches = 40;
            let bl = n / batches;
            let bm: Vec<f64> = (0..batches)
                .map(|b| crate::special::mean(&traces[i][b * bl..(b + 1) * bl]))
                .collect();
            let se = (crate::special::variance(&bm, 1) / batches as f64).sqrt();
            assert!(
                (mean - post_mean[i]).abs() < 3.0 * se,
                "component {i}: {mean} vs {} (se {se}, sd {})",
                post_mean[i],
                post_cov[(i, i)].sqrt()
            );
        }
    }

    #[test]
    fn returned_state_clears_the_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = DVector::from_vec(vec![0.1, 0.2]);
        let nu = DVector::from_vec(vec![1.0, -1.0]);
        let ll = |g: &DVector<f64>| -g.norm_squared() * 10.0;
        let cur = ll(&f);
        for _ in 0..200 {
            if let Some((g, l, ())) = ess_step(&f, cur, &nu, |g| (ll(g), ()), &mut rng) {
                assert_eq!(l, ll(&g));
                assert!(l >= cur - 50.0);
                assert_ne!(g, f);
            }
        }
    }
}
