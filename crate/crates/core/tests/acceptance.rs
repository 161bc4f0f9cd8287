//! Acceptance report: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condcop::copula::debye1;
use condcop::datagen::{generate, generate_misscov, posterior_mean_tau, replicate_study, Scenario, ScenarioId, StudyConfig};
use condcop::gp::{inducing_grid_1d, interp_matrix, kernel_matrix, residual_cov, GpFactor, InducingProvenance, InducingSet, KernelParams};
use condcop::mcmc::{build_sets, ess_update, run_chain, sample_vmf, Sampler, SamplerConfig, StepSizes};
use condcop::model::{inv_gamma_logpdf, log_posterior, CalibrationKind, CalibrationState, FullState, MarginalState, Margins, ModelSpec};
use condcop::sa_test::{sa_test, Decision};
use condcop::selection::{ccvml_from, cvml_from, waic_from, Criterion, LogLikMatrix, SelectionRow};
use condcop::special::{gauss_legendre, norm_cdf};
use condcop::CopulaFamily;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String, fails: &mut Vec<String>) {
    if !cond {
        fails.push(msg);
    }
}

fn verdict(fails: Vec<String>, summary: String) -> Outcome {
    if fails.is_empty() {
        Ok(summary)
    } else {
        Err(fails.join("; "))
    }
}

/// Gauss–Legendre nodes on `[0, 1]` over panels graded geometrically toward
/// both endpoints, where copula densities may be singular.
fn graded_rule(n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let mut cuts = vec![0.0];
    let mut b = 1e-12;
    while b < 0.05 {
        cuts.push(b);
        b *= 2.0;
    }
    let inner: Vec<f64> = (0..=18).map(|k| 0.05 + 0.05 * k as f64).collect();
    cuts.extend(&inner);
    let upper: Vec<f64> = cuts.iter().rev().skip(inner.len() + 1).map(|c| 1.0 - c).collect();
    cuts.extend(upper);
    cuts.push(1.0);
    let mut out = Vec::new();
    for p in cuts.windows(2) {
        let (lo, h) = (p[0], p[1] - p[0]);
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

fn c1_copula_math() -> Outcome {
    let mut fails = Vec::new();
    let rule = graded_rule(8);
    let cases = [
        (CopulaFamily::Clayton, 1.5),
        (CopulaFamily::Frank, 4.0),
        (CopulaFamily::Frank, -3.0),
        (CopulaFamily::Gaussian, 0.5),
        (CopulaFamily::Gumbel, 1.6),
        (CopulaFamily::T3, -0.4),
    ];
    let mut worst_norm: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for (fam, th) in cases {
        let c = fam.param(th).unwrap();
        let mass: f64 = rule
            .iter()
            .flat_map(|&(u, wu)| rule.iter().map(move |&(v, wv)| (u, v, wu * wv)))
            .map(|(u, v, w)| w * c.density(u, v))
            .sum();
        worst_norm = worst_norm.max((mass - 1.0).abs());
        check((mass - 1.0).abs() < 1e-4, format!("{fam} θ={th}: mass {mass}"), &mut fails);
        for &(u1, u2) in &[(0.3, 0.6), (0.7, 0.2), (0.5, 0.5), (0.15, 0.85)] {
            let d = 1e-5;
            let fd = (c.cdf(u1, u2 + d) - c.cdf(u1, u2 - d)) / (2.0 * d);
            let e = (fd - c.h(u1, u2)).abs();
            worst_h = worst_h.max(e);
            check(e < 1e-5, format!("{fam} θ={th}: h vs finite difference off by {e}"), &mut fails);
        }
    }
    let mut worst_rt: f64 = 0.0;
    for fam in CopulaFamily::ALL {
        let (lo, hi) = fam.tau_range();
        for k in 1..20 {
            let tau = lo.max(-0.95) + (hi.min(0.95) - lo.max(-0.95)) * k as f64 / 20.0;
            if tau.abs() < 1e-9 {
                continue;
            }
            let back = fam.theta_from_tau(tau).unwrap().tau();
            worst_rt = worst_rt.max((back - tau).abs());
            check((back - tau).abs() < 1e-8, format!("{fam}: τ {tau} → {back}"), &mut fails);
        }
    }
    // τ = 4 E[C(U1, U2)] − 1 as a 2-D quadrature
    let frank = CopulaFamily::Frank.param(5.0).unwrap();
    let ec: f64 = rule
        .iter()
        .flat_map(|&(u, wu)| rule.iter().map(move |&(v, wv)| (u, v, wu * wv)))
        .map(|(u, v, w)| w * frank.cdf(u, v) * frank.density(u, v))
        .sum();
    let tau_quad = 4.0 * ec - 1.0;
    let tau5 = frank.tau();
    check((tau5 - 0.4567).abs() < 1e-3, format!("Frank τ(5) = {tau5}"), &mut fails);
    check((tau_quad - tau5).abs() < 1e-3, format!("Frank τ(5) quadrature {tau_quad} vs {tau5}"), &mut fails);
    check(
        (1.0 - 4.0 / 5.0 * (1.0 - debye1(5.0)) - tau5).abs() < 1e-12,
        "Frank τ disagrees with its Debye form".into(),
        &mut fails,
    );
    let cl = CopulaFamily::Clayton.param(1.0).unwrap().density(0.5, 0.5);
    check((cl - 32.0 / 27.0).abs() < 1e-10, format!("Clayton c(0.5,0.5;1) = {cl}"), &mut fails);
    verdict(
        fails,
        format!(
            "mass err {worst_norm:.1e}, h err {worst_h:.1e}, round trip {worst_rt:.1e}, Frank τ(5) {tau5:.5} (quad {tau_quad:.5})"
        ),
    )
}

fn c2_sparse_gp() -> Outcome {
    let mut fails = Vec::new();
    let z = InducingSet {
        points: DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        provenance: InducingProvenance::KmeansCenters,
    };
    let w = KernelParams(vec![0.0, -3.0, -3.0]);
    let a = interp_matrix(&z.points, &z, &w).unwrap().a;
    let ea = (a - DMatrix::identity(4, 4)).amax();
    check(ea < 1e-8, format!("A(Z,Z) − I = {ea:.2e}"), &mut fails);
    let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.9, 0.4, 0.5, 0.95]);
    let eb = residual_cov(&x, &x, &w).unwrap().amax();
    check(eb < 1e-8, format!("B(X,X) = {eb:.2e}"), &mut fails);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for m in 2..=8 {
        let pts = DMatrix::from_fn(m, 2, |_, _| rng.random::<f64>());
        let wk = KernelParams(vec![0.3, -1.0, -0.5]);
        let k = kernel_matrix(&pts, &pts, &wk).unwrap();
        let f = GpFactor::from_cov(&k).unwrap();
        let kj = &k + DMatrix::identity(m, m) * f.jitter;
        let inv = kj.clone().try_inverse().unwrap();
        let b = DMatrix::from_fn(m, 3, |_, _| rng.random::<f64>() - 0.5);
        worst = worst.max((f.solve(&b) - &inv * &b).amax());
        let v = DVector::from_fn(m, |_, _| rng.random::<f64>());
        let lp_dense = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + kj.determinant().ln() + (v.transpose() * &inv * &v)[0]);
        worst = worst.max((f.log_pdf(&v) - lp_dense).abs());
    }
    check(worst < 1e-8, format!("Cholesky vs dense inverse {worst:.2e}"), &mut fails);
    for q in [1usize, 2, 3, 10] {
        let g = inducing_grid_1d(q, 30).unwrap();
        let s = (q as f64).sqrt();
        check(
            g.points[(0, 0)] == -s && g.points[(29, 0)] == s,
            format!("grid endpoints for q={q}"),
            &mut fails,
        );
    }
    verdict(fails, format!("A−I {ea:.3e}, B {eb:.3e}, solve vs dense {worst:.1e}, grid endpoints exact"))
}

fn ks_normal(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn sampler_fixture() -> (condcop::Dataset, condcop::model::InducingSets, FullState) {
    let g = generate(&Scenario::new(ScenarioId::Sc1), 40, CopulaFamily::Clayton, 9).unwrap();
    let spec = ModelSpec::new(CopulaFamily::Clayton, CalibrationKind::GpSim);
    let cfg = SamplerConfig::new(10, 0).with_inducing(6, 6, 6);
    let sets = build_sets(&g.data, &spec, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let marg = |rng: &mut ChaCha8Rng| MarginalState {
        f_tilde: DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5),
        w: KernelParams(vec![0.0, -1.0, -1.0]),
        sigma2: 0.1,
    };
    let m = [marg(&mut rng), marg(&mut rng)];
    let state = FullState {
        margins: Margins::Gaussian { margins: m },
        calib: CalibrationState::GpSim {
            beta: DVector::from_vec(vec![0.6, 0.8]),
            f_tilde: DVector::from_element(6, 0.8),
            w: KernelParams(vec![0.0, -1.0]),
        },
        family: CopulaFamily::Clayton,
    };
    (g.data, sets, state)
}

fn c3_sampler() -> Outcome {
    let mut fails = Vec::new();
    let z = inducing_grid_1d(1, 5).unwrap();
    let prior = GpFactor::new(&z, &KernelParams(vec![0.2, -0.7])).unwrap();
    let flat = |_: &DVector<f64>| 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let chains = 4000;
    let mut white = [Vec::with_capacity(chains), Vec::with_capacity(chains)];
    for _ in 0..chains {
        let mut f = prior.sample(&mut rng);
        for _ in 0..5 {
            f = ess_update(&f, 0.0, &prior, flat, &mut rng).0;
        }
        let e = prior.whiten(&f);
        white[0].push(e[0]);
        white[1].push(e[4]);
    }
    let crit = 1.63 / (chains as f64).sqrt();
    let ks = [ks_normal(white[0].clone()), ks_normal(white[1].clone())];
    check(ks[0] < crit && ks[1] < crit, format!("ESS prior KS {ks:?} vs {crit:.4}"), &mut fails);

    // conjugate toy: prior N(0, K), likelihood N(y; f, s² I)
    let k = &prior.chol * prior.chol.transpose();
    let y = DVector::from_vec(vec![0.8, -0.3, 0.5, 0.1, -0.6]);
    let s2 = 0.25;
    let post_mean = &k * (&k + DMatrix::identity(5, 5) * s2).try_inverse().unwrap() * &y;
    let ll = |f: &DVector<f64>| -0.5 * (f - &y).norm_squared() / s2;
    let mut f = DVector::zeros(5);
    let mut cur = ll(&f);
    let (burn, n, batches) = (500, 40_000, 40);
    let mut traces: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for t in 0..burn + n {
        let (g, l) = ess_update(&f, cur, &prior, ll, &mut rng);
        f = g;
        cur = l;
        if t >= burn {
            for (i, tr) in traces.iter_mut().enumerate() {
                tr.push(f[i]);
            }
        }
    }
    let mut worst_z: f64 = 0.0;
    for (i, tr) in traces.iter().enumerate() {
        let bl = n / batches;
        let bm: Vec<f64> = (0..batches).map(|b| tr[b * bl..(b + 1) * bl].iter().sum::<f64>() / bl as f64).collect();
        let mean = bm.iter().sum::<f64>() / batches as f64;
        let se = (bm.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt();
        let zs = (mean - post_mean[i]).abs() / se;
        worst_z = worst_z.max(zs);
        check(zs < 3.0, format!("conjugate toy component {i}: {zs:.2} SE"), &mut fails);
    }

    let (data, sets, state) = sampler_fixture();
    let s = Sampler::new(&data, &sets, state.clone(), StepSizes::default(), ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut worst_ratio: f64 = 0.0;
    for j in 0..2 {
        let (shape, rate) = s.sigma2_proposal(j);
        let cur = state.marginal(j).unwrap().sigma2;
        for &prop in &[0.03, 0.08, 0.2, 0.6] {
            let (reduced, ..) = s.sigma2_log_ratio(j, prop);
            let mut next = state.clone();
            next.marginal_mut(j).unwrap().sigma2 = prop;
            let full = log_posterior(&data, &next, &sets).unwrap() - log_posterior(&data, &state, &sets).unwrap()
                + inv_gamma_logpdf(cur, shape, rate)
                - inv_gamma_logpdf(prop, shape, rate);
            worst_ratio = worst_ratio.max((reduced - full).abs());
        }
    }
    check(worst_ratio < 1e-10, format!("σ² reduced ratio off by {worst_ratio:.2e}"), &mut fails);

    let mu = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let mut sum = DVector::zeros(3);
    let draws = 10_000;
    for _ in 0..draws {
        sum += sample_vmf(&mu, 0.0, &mut rng);
    }
    let resultant = sum.norm() / draws as f64;
    check(resultant < 0.05, format!("VMF κ=0 mean resultant {resultant}"), &mut fails);
    verdict(
        fails,
        format!(
            "KS {:.4}/{:.4} < {crit:.4}, toy max {worst_z:.2} SE, σ² ratio {worst_ratio:.1e}, VMF resultant {resultant:.4}",
            ks[0], ks[1]
        ),
    )
}

fn c4_sc4_recovery() -> Outcome {
    let cfg = StudyConfig {
        scenarios: vec![ScenarioId::Sc4],
        models: vec![
            ModelSpec::new(CopulaFamily::Clayton, CalibrationKind::Constant),
            ModelSpec::new(CopulaFamily::Frank, CalibrationKind::GpSim),
        ],
        replicates: 10,
        n: 200,
        uniform_margins: true,
        generator: CopulaFamily::Clayton,
        sampler: SamplerConfig::new(3000, 0),
        seed: 4004,
        cond_expectation: false,
    };
    let t = replicate_study(&cfg).map_err(|e| e.to_string())?;
    let get = |m: &str| {
        t.row(ScenarioId::Sc4, m)
            .and_then(|r| r.tau.map(|x| (x.root_imse(), r.failed)))
            .ok_or_else(|| format!("no metrics for {m}"))
    };
    let (c, cf) = get(&cfg.models[0].with_uniform_margins(true).label())?;
    let (g, gf) = get(&cfg.models[1].with_uniform_margins(true).label())?;
    let summary = format!("√IMSE constant-Clayton {c:.4}, GP-SIM-Frank {g:.4} (failed fits {cf} and {gf})");
    if c < 0.05 && c < g && cf == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn c5_family_selection() -> Outcome {
    let models: Vec<ModelSpec> = [CopulaFamily::Clayton, CopulaFamily::Frank, CopulaFamily::Gaussian]
        .into_iter()
        .map(|f| ModelSpec::new(f, CalibrationKind::GpSim))
        .collect();
    let cfg = StudyConfig {
        scenarios: vec![ScenarioId::Sc1],
        models: models.clone(),
        replicates: 10,
        n: 200,
        uniform_margins: true,
        generator: CopulaFamily::Clayton,
        sampler: SamplerConfig::new(3000, 0),
        seed: 5005,
        cond_expectation: false,
    };
    let t = replicate_study(&cfg).map_err(|e| e.to_string())?;
    let clayton = models[0].with_uniform_margins(true).label();
    let mut both = 0;
    for r in 0..cfg.replicates {
        let rows: Vec<&SelectionRow> = t
            .fits
            .iter()
            .filter(|f| f.replicate == r)
            .filter_map(|f| f.selection.as_ref())
            .collect();
        if rows.len() != models.len() {
            continue;
        }
        let best = |c: Criterion| {
            rows.iter()
                .max_by(|a, b| c.score(a).total_cmp(&c.score(b)))
                .map(|r| r.model.clone())
        };
        if best(Criterion::Cvml).as_deref() == Some(clayton.as_str())
            && best(Criterion::Waic).as_deref() == Some(clayton.as_str())
        {
            both += 1;
        }
    }
    let summary = format!(
        "Clayton chosen by CVML and WAIC in {both}/10 (CVML {}, CCVML {}, WAIC {})",
        t.wins(ScenarioId::Sc1, Criterion::Cvml, &clayton),
        t.wins(ScenarioId::Sc1, Criterion::Ccvml, &clayton),
        t.wins(ScenarioId::Sc1, Criterion::Waic, &clayton)
    );
    if both >= 8 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn c6_sa_evidence() -> Outcome {
    let spec = ModelSpec::new(CopulaFamily::Clayton, CalibrationKind::GpSim).with_uniform_margins(true);
    let mut counts = [0usize; 2];
    let mut evs = [Vec::new(), Vec::new()];
    for (k, id) in [ScenarioId::Sc4, ScenarioId::Sc1].into_iter().enumerate() {
        let sc = Scenario::new(id).with_uniform_margins(true);
        for r in 0..10u64 {
            let seed = 6006 + 100 * k as u64 + r;
            let g = generate(&sc, 450, CopulaFamily::Clayton, seed).map_err(|e| e.to_string())?;
            let rep = sa_test(&g.data, &spec, &SamplerConfig::new(5000, seed), 2.0 / 3.0, 200, seed, seed ^ 0x5A)
                .map_err(|e| e.to_string())?;
            let supports = rep.cvml.decision == Decision::SupportsSa;
            if supports == (id == ScenarioId::Sc4) {
                counts[k] += 1;
            }
            evs[k].push(format!("{:.2}", rep.cvml.ev));
        }
    }
    let summary = format!(
        "Sc4 EV>0.05 in {}/10 [{}]; Sc1 EV≤0.05 in {}/10 [{}]",
        counts[0],
        evs[0].join(" "),
        counts[1],
        evs[1].join(" ")
    );
    if counts[0] >= 7 && counts[1] >= 8 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn c7_missing_covariate() -> Outcome {
    let m = generate_misscov(600, 7007).map_err(|e| e.to_string())?;
    let d = &m.x1_only;
    let cfg = SamplerConfig::new(5000, 7007);
    let single = ModelSpec::new(CopulaFamily::Clayton, CalibrationKind::SingleCovariate { index: 0 });
    let constant = ModelSpec::new(CopulaFamily::Clayton, CalibrationKind::Constant);
    let ds = run_chain(d, &single, &cfg).map_err(|e| e.to_string())?;
    let dc = run_chain(d, &constant, &cfg).map_err(|e| e.to_string())?;
    let rs = SelectionRow::from_draws(&ds, d).map_err(|e| e.to_string())?;
    let rc = SelectionRow::from_draws(&dc, d).map_err(|e| e.to_string())?;
    let grid = DMatrix::from_fn(101, 1, |i, _| i as f64 / 100.0);
    let tau = posterior_mean_tau(&ds, &grid).map_err(|e| e.to_string())?;
    let range = tau.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - tau.iter().cloned().fold(f64::INFINITY, f64::min);
    let summary = format!(
        "CVML single {:.1} vs constant {:.1}; τ̂(x1) range {range:.3}",
        rs.cvml, rc.cvml
    );
    if rs.cvml > rc.cvml && range > 0.1 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn c8_selection_identities() -> Outcome {
    let mut fails = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let m1 = DMatrix::from_fn(10, 5, |_, _| rng.random_range(-2.0..0.5));
        let m2 = DMatrix::from_fn(10, 5, |_, _| rng.random_range(-2.0..0.5));
        let c = DMatrix::from_fn(10, 5, |_, _| rng.random_range(-0.5..1.5));
        let joint = &m1 + &m2 + c;
        let ll = LogLikMatrix::new(joint.clone(), [m1.clone(), m2.clone()]).unwrap();
        let (mut cv, mut cc, mut fit, mut pen) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..5 {
            let p: Vec<f64> = joint.column(i).iter().map(|v| v.exp()).collect();
            cv -= (p.iter().map(|v| 1.0 / v).sum::<f64>() / 10.0).ln();
            let a: f64 = (0..10).map(|t| m2[(t, i)].exp() / p[t]).sum::<f64>() / 10.0;
            let b: f64 = (0..10).map(|t| m1[(t, i)].exp() / p[t]).sum::<f64>() / 10.0;
            cc -= 0.5 * (a.ln() + b.ln());
            fit += (p.iter().sum::<f64>() / 10.0).ln();
            let l: Vec<f64> = joint.column(i).iter().copied().collect();
            let mu = l.iter().sum::<f64>() / 10.0;
            pen += l.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 9.0;
        }
        let w = waic_from(&ll).unwrap();
        for e in [
            cvml_from(&ll).unwrap() - cv,
            ccvml_from(&ll).unwrap() - cc,
            w.fit - fit,
            w.penalty - pen,
            w.waic - (-2.0 * fit + 2.0 * pen),
        ] {
            worst = worst.max(e.abs());
        }
        let uni = LogLikMatrix::joint_only(joint).unwrap();
        let d = (ccvml_from(&uni).unwrap() - cvml_from(&uni).unwrap()).abs();
        check(d < 1e-12, format!("CCVML − CVML under uniform margins {d:.2e}"), &mut fails);
    }
    check(worst < 1e-8, format!("naive oracle mismatch {worst:.2e}"), &mut fails);
    let constant = LogLikMatrix::joint_only(DMatrix::from_fn(10, 5, |_, i| -0.3 * i as f64)).unwrap();
    let pen = waic_from(&constant).unwrap().penalty;
    check(pen == 0.0, format!("constant per-draw penalty {pen}"), &mut fails);
    verdict(fails, format!("oracle max error {worst:.1e}, uniform-margin identity and zero penalty exact"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 8] = [
        ("copula math", c1_copula_math, Duration::from_secs(60)),
        ("sparse GP", c2_sparse_gp, Duration::from_secs(60)),
        ("sampler correctness", c3_sampler, Duration::from_secs(300)),
        ("Sc4 recovery", c4_sc4_recovery, Duration::from_secs(1800)),
        ("family selection", c5_family_selection, Duration::from_secs(3600)),
        ("SA evidence", c6_sa_evidence, Duration::from_secs(3600)),
        ("missing covariate", c7_missing_covariate, Duration::from_secs(1800)),
        ("selection identities", c8_selection_identities, Duration::from_secs(60)),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, f, budget)) in criteria.into_iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let t = Instant::now();
        let out = f();
        let el = t.elapsed();
        let slow = el > budget;
        let (tag, msg) = match (&out, slow) {
            (Ok(m), false) => ("PASS", m.clone()),
            (Ok(m), true) => ("FAIL", format!("{m}; over time budget {budget:?}")),
            (Err(m), _) => ("FAIL", m.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} [{}] {name}: {msg} ({:.1}s)", k + 1, el.as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
