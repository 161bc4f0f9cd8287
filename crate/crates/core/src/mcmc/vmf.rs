//! von Mises–Fisher sampling on the unit sphere (Wood's rejection scheme).

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// One draw from `VMF(mu, kappa)` on `S^{p-1}`, density `∝ exp(κ xᵀμ)`.
pub fn sample_vmf<R: Rng + ?Sized>(mu: &DVector<f64>, kappa: f64, rng: &mut R) -> DVector<f64> {
    let p = mu.len();
    assert!(p >= 1, "VMF needs a non-empty mean direction");
    let kappa = kappa.max(0.0);
    if p == 1 {
        // S^0 = {±1}
        let keep = 1.0 / (1.0 + (-2.0 * kappa).exp());
        return if rng.random::<f64>() < keep { mu.clone() } else { -mu };
    }
    let pm1 = (p - 1) as f64;
    let b = pm1 / (2.0 * kappa + (4.0 * kappa * kappa + pm1 * pm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + pm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(pm1 / 2.0, pm1 / 2.0).expect("positive shape");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + pm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w.clamp(-1.0, 1.0);
        }
    };
    // uniform direction in the tangent space at mu
    let v = loop {
        let mut g = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        g -= mu * g.dot(mu);
        let nrm = g.norm();
        if nrm > 1e-12 {
            break g / nrm;
        }
    };
    let x = mu * w + v * (1.0 - w * w).sqrt();
    let nrm = x.norm();
    x / nrm
}
