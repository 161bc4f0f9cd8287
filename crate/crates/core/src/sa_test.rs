//! Permutation test of the simplifying assumption on held-out data.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, PosteriorDraws, SamplerConfig};
use crate::model::{calibration_eta, margin_terms, marginal_means, Dataset, Margins, ModelSpec};
use crate::special::{log_mean_exp, mix_seed};

pub const DEFAULT_PERMUTATIONS: usize = 500;
pub const EV_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub split_seed: u64,
}

/// Uniform random partition with `round(ratio·n)` training rows.
pub fn split_train_test(data: &Dataset, ratio: f64, seed: u64) -> Result<SplitData> {
    let n = data.n();
    if n < 6 {
        return Err(Error::Data(format!("need at least 6 observations to split, got {n}")));
    }
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train < 2 || n - n_train < 2 {
        return Err(Error::Config(format!(
            "split of {n} rows at ratio {ratio} leaves {n_train} training and {} test rows",
            n - n_train
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitData {
        train: data.subset(&train_idx),
        test: data.subset(&test_idx),
        train_idx,
        test_idx,
        split_seed: seed,
    })
}

/// Per-draw predictive pieces at test points (`M × n*`).
#[derive(Clone, Debug, PartialEq)]
pub struct Predictive {
    pub family: CopulaFamily,
    pub marg: [DMatrix<f64>; 2],
    pub u: [DMatrix<f64>; 2],
    pub eta: DMatrix<f64>,
}

impl Predictive {
    pub fn new(draws: &PosteriorDraws, test: &Dataset) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Config("no posterior draws".into()));
        }
        let mut x = test.x.clone();
        let outside = x.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if outside > 0 {
            log::warn!("{outside} test covariate values outside [0, 1] clamped");
            x.apply(|v| *v = v.clamp(0.0, 1.0));
        }
        let (m, n) = (draws.len(), test.n());
        let rows = draws
            .states
            .par_iter()
            .map(|s| -> Result<_> {
                let eta = calibration_eta(&x, &s.calib, draws.sets.calib.as_ref())?;
                let parts = match &s.margins {
                    Margins::Uniform => (
                        [vec![0.0; n], vec![0.0; n]],
                        [test.y1.as_slice().to_vec(), test.y2.as_slice().to_vec()],
                    ),
                    Margins::Gaussian { margins } => {
                        let mut l = Vec::with_capacity(2);
                        let mut u = Vec::with_capacity(2);
                        for (j, mg) in margins.iter().enumerate() {
                            let mean = marginal_means(&x, mg, draws.sets.margin(j)?)?;
                            let (a, b) = margin_terms(test.y(j), &mean, mg.sigma2);
                            l.push(a);
                            u.push(b);
                        }
                        let (l1, u1) = (l.pop().unwrap(), u.pop().unwrap());
                        ([l.pop().unwrap(), l1], [u.pop().unwrap(), u1])
                    }
                };
                Ok((eta, parts))
            })
            .collect::<Result<Vec<_>>>()?;
        let mat = |f: &dyn Fn(usize, usize) -> f64| DMatrix::from_fn(m, n, f);
        Ok(Predictive {
            family: draws.family(),
            marg: [mat(&|t, i| rows[t].1 .0[0][i]), mat(&|t, i| rows[t].1 .0[1][i])],
            u: [mat(&|t, i| rows[t].1 .1[0][i]), mat(&|t, i| rows[t].1 .1[1][i])],
            eta: mat(&|t, i| rows[t].0[i]),
        })
    }

    pub fn n_draws(&self) -> usize {
        self.eta.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.eta.ncols()
    }

    /// Joint log-densities with the calibration of pair `i` taken from
    /// test point `lambda[i]`.
    fn joint(&self, lambda: Option<&[usize]>) -> Result<DMatrix<f64>> {
        let (m, n) = (self.n_draws(), self.n_test());
        if let Some(l) = lambda {
            check_permutation(l, n)?;
        }
        let mut out = DMatrix::zeros(m, n);
        for i in 0..n {
            let k = lambda.map_or(i, |l| l[i]);
            for t in 0..m {
                let c = self
                    .family
                    .inv_link(self.eta[(t, k)])
                    .log_density(self.u[0][(t, i)], self.u[1][(t, i)]);
                let v = self.marg[0][(t, i)] + self.marg[1][(t, i)] + c;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "predictive log-density",
                        obs: i,
                        draw: t,
                    });
                }
                out[(t, i)] = v;
            }
        }
        Ok(out)
    }

    fn cvml_of(joint: &DMatrix<f64>) -> f64 {
        (0..joint.ncols()).map(|i| log_mean_exp(joint.column(i).iter().copied())).sum()
    }

    fn ccvml_of(&self, joint: &DMatrix<f64>) -> f64 {
        let s: f64 = (0..joint.ncols())
            .map(|i| {
                let j = joint.column(i);
                let c1 = log_mean_exp(j.iter().zip(self.marg[1].column(i).iter()).map(|(l, m)| l - m));
                let c2 = log_mean_exp(j.iter().zip(self.marg[0].column(i).iter()).map(|(l, m)| l - m));
                c1 + c2
            })
            .sum();
        0.5 * s
    }

    /// Predictive log-score `Σ log (1/M) Σ_t P(y*1i, y*2i | ω(t))`.
    pub fn cvml_obs(&self) -> Result<f64> {
        Ok(Self::cvml_of(&self.joint(None)?))
    }

    pub fn cvml_perm(&self, lambda: &[usize]) -> Result<f64> {
        Ok(Self::cvml_of(&self.joint(Some(lambda))?))
    }

    /// Conditional predictive log-score averaged over both directions.
    pub fn ccvml_obs(&self) -> Result<f64> {
        Ok(self.ccvml_of(&self.joint(None)?))
    }

    pub fn ccvml_perm(&self, lambda: &[usize]) -> Result<f64> {
        Ok(self.ccvml_of(&self.joint(Some(lambda))?))
    }

    /// Both criteria for one permutation, sharing the joint evaluation.
    pub fn both_perm(&self, lambda: &[usize]) -> Result<(f64, f64)> {
        let j = self.joint(Some(lambda))?;
        Ok((Self::cvml_of(&j), self.ccvml_of(&j)))
    }
}

fn check_permutation(l: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if l.len() != n || l.iter().any(|&k| k >= n || std::mem::replace(&mut seen[k], true)) {
        return Err(Error::Config(format!("not a permutation of 0..{n}")));
    }
    Ok(())
}

/// `J` uniform permutations of `0..n`, the `j`-th from its own stream.
pub fn permutations(n: usize, j: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..j)
        .map(|k| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64)));
            p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    SupportsSa,
    RejectsSa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub criterion: String,
    pub observed: f64,
    pub permuted: Vec<f64>,
    pub frac_below: f64,
    pub frac_above: f64,
    pub ev: f64,
    pub decision: Decision,
    /// Every permuted value equals the observed one.
    pub degenerate: bool,
    pub permutation_seed: u64,
}

/// `EV = 2 min(#{obs < perm_j}, #{obs > perm_j}) / J`; ties count in
/// neither tail, and the all-tied case reports `EV = 1`.
pub fn evidence(observed: f64, permuted: &[f64]) -> EvidenceReport {
    let j = permuted.len().max(1) as f64;
    let below = permuted.iter().filter(|&&p| observed < p).count();
    let above = permuted.iter().filter(|&&p| observed > p).count();
    let degenerate = !permuted.is_empty() && below == 0 && above == 0;
    let ev = if degenerate {
        1.0
    } else {
        2.0 * (below.min(above) as f64 / j)
    };
    EvidenceReport {
        criterion: "CVML".into(),
        observed,
        permuted: permuted.to_vec(),
        frac_below: below as f64 / j,
        frac_above: above as f64 / j,
        ev,
        decision: if ev > EV_THRESHOLD {
            Decision::SupportsSa
        } else {
            Decision::RejectsSa
        },
        degenerate,
        permutation_seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaTestReport {
    pub model: String,
    pub n_train: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub permutations: usize,
    pub cvml: EvidenceReport,
    pub ccvml: EvidenceReport,
}

/// Evidence for both criteria from an already-fitted model.
pub fn evidence_from_draws(
    draws: &PosteriorDraws,
    test: &Dataset,
    j: usize,
    perm_seed: u64,
) -> Result<(EvidenceReport, EvidenceReport)> {
    if j == 0 {
        return Err(Error::Config("need at least one permutation".into()));
    }
    let pred = Predictive::new(draws, test)?;
    let joint = pred.joint(None)?;
    let (cv_obs, cc_obs) = (Predictive::cvml_of(&joint), pred.ccvml_of(&joint));
    let perms = permutations(test.n(), j, perm_seed);
    let vals = perms
        .par_iter()
        .map(|l| pred.both_perm(l))
        .collect::<Result<Vec<_>>>()?;
    let (cv, cc): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
    let mut a = evidence(cv_obs, &cv);
    a.permutation_seed = perm_seed;
    let mut b = evidence(cc_obs, &cc);
    b.criterion = "CCVML".into();
    b.permutation_seed = perm_seed;
    Ok((a, b))
}

/// Split, fit on the training part, and evaluate evidence on the test part.
pub fn sa_test(
    data: &Dataset,
    spec: &ModelSpec,
    config: &SamplerConfig,
    ratio: f64,
    j: usize,
    split_seed: u64,
    perm_seed: u64,
) -> Result<SaTestReport> {
    let split = split_train_test(data, ratio, split_seed)?;
    let draws = run_chain(&split.train, spec, config)?;
    let (cvml, ccvml) = evidence_from_draws(&draws, &split.test, j, perm_seed)?;
    Ok(SaTestReport {
        model: spec.label(),
        n_train: split.train.n(),
        n_test: split.test.n(),
        split_seed,
        permutations: j,
        cvml,
        ccvml,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn dataset(n: usize) -> Dataset {
        Dataset::new(
            DVector::from_fn(n, |i, _| i as f64),
            DVector::from_fn(n, |i, _| -(i as f64)),
            DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let d = dataset(1500);
        let s = split_train_test(&d, 2.0 / 3.0, 4).unwrap();
        assert_eq!((s.train.n(), s.test.n()), (1000, 500));
        let mut all: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1500).collect::<Vec<_>>());
        assert_eq!(split_train_test(&d, 2.0 / 3.0, 4).unwrap(), s);
        assert!(split_train_test(&dataset(5), 0.5, 0).is_err());
    }

    fn toy_predictive(family: CopulaFamily, eta: DMatrix<f64>) -> Predictive {
        let (m, n) = eta.shape();
        let g = |s: f64| DMatrix::from_fn(m, n, |t, i| 0.1 + 0.8 * ((t * 7 + i * 3) as f64 * s).sin().abs());
        Predictive {
            family,
            marg: [g(0.37).map(|v| -v), g(0.11).map(|v| -2.0 * v)],
            u: [g(1.3), g(0.7)],
            eta,
        }
    }

    #[test]
    fn identity_and_constant_permutations_reproduce_observed() {
        let p = toy_predictive(CopulaFamily::Clayton, DMatrix::from_fn(4, 5, |t, i| 0.2 * t as f64 - 0.1 * i as f64));
        let id: Vec<usize> = (0..5).collect();
        assert_eq!(p.cvml_perm(&id).unwrap(), p.cvml_obs().unwrap());
        assert_eq!(p.ccvml_perm(&id).unwrap(), p.ccvml_obs().unwrap());
        let c = toy_predictive(CopulaFamily::Frank, DMatrix::from_fn(4, 5, |t, _| 0.5 + t as f64));
        let obs = c.cvml_obs().unwrap();
        for l in permutations(5, 20, 1) {
            assert_eq!(c.cvml_perm(&l).unwrap(), obs);
        }
        assert!(p.cvml_perm(&[0, 0, 1, 2, 3]).is_err());
    }

    #[test]
    fn predictive_scores_match_naive_sums() {
        let p = toy_predictive(CopulaFamily::Gumbel, DMatrix::from_fn(10, 5, |t, i| (t as f64 - i as f64) * 0.1));
        let lambda = [3, 0, 4, 1, 2];
        let m = 10.0;
        let mut cv = 0.0;
        let mut cc = 0.0;
        for i in 0..5 {
            let (mut s, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for t in 0..10 {
                let c = p.family.inv_link(p.eta[(t, lambda[i])]).density(p.u[0][(t, i)], p.u[1][(t, i)]);
                let (f1, f2) = (p.marg[0][(t, i)].exp(), p.marg[1][(t, i)].exp());
                s += f1 * f2 * c;
                s1 += f1 * c;
                s2 += f2 * c;
            }
            cv += (s / m).ln();
            cc += 0.5 * ((s1 / m).ln() + (s2 / m).ln());
        }
        assert!((p.cvml_perm(&lambda).unwrap() - cv).abs() < 1e-8);
        assert!((p.ccvml_perm(&lambda).unwrap() - cc).abs() < 1e-8);
    }

    #[test]
    fn uniform_margins_make_conditional_score_equal_joint() {
        let mut p = toy_predictive(CopulaFamily::Clayton, DMatrix::from_element(3, 4, 0.4));
        p.marg = [DMatrix::zeros(3, 4), DMatrix::zeros(3, 4)];
        assert!((p.ccvml_obs().unwrap() - p.cvml_obs().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn evidence_tails_and_ties() {
        let r = evidence(10.0, &[1.0, 2.0, 3.0]);
        assert_eq!((r.ev, r.decision), (0.0, Decision::RejectsSa));
        assert_eq!(evidence(-10.0, &[1.0, 2.0, 3.0]).ev, 0.0);
        let r = evidence(2.5, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((r.ev, r.decision), (1.0, Decision::SupportsSa));
        let r = evidence(1.0, &[1.0; 7]);
        assert!(r.degenerate);
        assert_eq!(r.ev, 1.0);
        let mut perm = vec![1.0, 5.0, 2.0, 7.0, 0.5];
        let a = evidence(3.0, &perm).ev;
        perm.reverse();
        assert_eq!(evidence(3.0, &perm).ev, a);
    }
}
