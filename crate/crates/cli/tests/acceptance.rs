//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! Runs without the libtest harness. Pass criterion numbers as arguments to
//! run a subset. A failing criterion is reported but only fails the process
//! when `WVAG_ACCEPTANCE_STRICT` is set.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_complex::Complex;
use num_rational::Rational64;
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::Value;
use tempfile::TempDir;

use wvag::charfn::{char_fn, fourier_invertible, vg_exponent, wvag_exponent};
use wvag::fit::Method;
use wvag::gof::{likelihood_ratio_test, peacock_ks, peacock_ks_brute, rosenblatt_chi2, GofConfig};
use wvag::inversion::{joint_density, marginal_law, GridSpec, InversionOptions};
use wvag::mle::{fit_mle, MleConfig};
use wvag::moments::analytic_moments;
use wvag::simulate::{simulate_sample, RngStream, WvagSampler};
use wvag::special::chi2_sf;
use wvag::study::{quantile_study, reference_truth, run_study, standard_quantile_sets, StudyConfig, StudyResult};
use wvag::{Constraints, ExactParams, ModelKind, Params};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn truth() -> Params {
    reference_truth()
}

fn runner() -> TestRunner {
    TestRunner::new_with_rng(Config::default(), TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn draw<S: Strategy>(s: &S, r: &mut TestRunner) -> S::Value {
    s.new_tree(r).expect("strategy yields a value").current()
}

/// Feasible bivariate parameters with `a alpha_k` bounded away from 1.
fn feasible() -> impl Strategy<Value = Params> {
    (
        (0.05f64..3.0, 0.02f64..0.98, 0.02f64..0.98),
        (-1.0f64..1.0, -1.0f64..1.0),
        (0.05f64..3.0, 0.05f64..3.0, -0.99f64..0.99),
        (-1.0f64..1.0, -1.0f64..1.0),
    )
        .prop_map(|((a, f1, f2), (mu1, mu2), (s1, s2, rho), (m1, m2))| {
            let s12 = rho * (s1 * s2).sqrt();
            Params::bivariate(a, [f1 / a, f2 / a], [mu1, mu2], [[s1, s12], [s12, s2]], [m1, m2]).unwrap()
        })
}

fn mean_se(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// 1. Invertibility gate

fn invertibility_gate() -> Outcome {
    let r = Rational64::new;
    let p = ExactParams::bivariate(
        r(1, 1),
        [r(4, 5), r(3, 5)],
        [r(1, 10), r(-3, 10)],
        [[r(1, 1), r(3, 5)], [r(3, 5), r(6, 5)]],
        [r(-1, 10), r(3, 10)],
    )
    .unwrap();
    let one = fourier_invertible(&p, r(1, 1));
    let tenth = fourier_invertible(&p, r(1, 10));
    let f1 = fourier_invertible(&truth(), 1.0);
    let f01 = fourier_invertible(&truth(), 0.1);
    let pass = one.margin == r(3, 4)
        && one.invertible
        && tenth.margin == r(3, 40)
        && !tenth.invertible
        && (f1.margin - 0.75).abs() < 1e-12
        && f1.invertible
        && (f01.margin - 0.075).abs() < 1e-12
        && !f01.invertible;
    outcome(pass, format!("exact margins {} at c=1, {} at c=0.1; f64 {} and {}", one.margin, tenth.margin, f1.margin, f01.margin))
}

// 2. Exponent identities

fn exponent_identities() -> Outcome {
    const CASES: usize = 10_000;
    let start = Instant::now();
    let mut r = runner();
    let params = feasible();
    let theta = (-20.0f64..20.0, -20.0f64..20.0);
    let (mut decomp, mut marginal, mut scaling) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..CASES {
        let p = draw(&params, &mut r);
        let (t1, t2) = draw(&theta, &mut r);
        let th = [t1, t2];
        let d = p.decompose();
        let mut sum = vg_exponent(&d.common, &th);
        for (k, v) in d.idiosyncratic.iter().enumerate() {
            sum += vg_exponent(v, &[th[k]]);
        }
        decomp = decomp.max((wvag_exponent(&p, &th) - sum).norm());

        let k = usize::from(t2 > 0.0);
        let mut axis = [0.0; 2];
        axis[k] = th[k];
        marginal = marginal.max((wvag_exponent(&p, &axis) - vg_exponent(&p.marginal(k), &[th[k]])).norm());

        let (c, t) = draw(&(0.05f64..5.0, 0.1f64..3.0), &mut r);
        let q = p.time_scaled(c).unwrap();
        scaling = scaling.max((char_fn(&p, c * t, &th) - char_fn(&q, t, &th)).norm());
    }
    let elapsed = start.elapsed();
    let pass = decomp < 1e-12 && marginal < 1e-12 && scaling < 1e-12 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!("{CASES} cases, largest differences {decomp:.1e} / {marginal:.1e} / {scaling:.1e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

// 3. Inversion fidelity

struct Kernel {
    inv: [f64; 3],
    norm: f64,
}

impl Kernel {
    fn new(h: [f64; 3]) -> Self {
        let det = h[0] * h[2] - h[1] * h[1];
        Kernel { inv: [h[2] / det, -h[1] / det, h[0] / det], norm: 1.0 / (2.0 * PI * det.sqrt()) }
    }

    fn eval(&self, u: [f64; 2]) -> f64 {
        let q = self.inv[0] * u[0] * u[0] + 2.0 * self.inv[1] * u[0] * u[1] + self.inv[2] * u[1] * u[1];
        self.norm * (-0.5 * q).exp()
    }
}

/// Lattice points allowed outside the pointwise 3 SE band (99.5% binomial
/// bound for 400 points).
const BAND_EXCEEDANCES: usize = 4;

fn inversion_fidelity() -> Outcome {
    let start = Instant::now();
    let p = truth();
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for k in 0..2 {
        let law = marginal_law(&p, k, 1.0).unwrap();
        let sd = law.variance().sqrt();
        lo[k] = law.mean() - 10.0 * sd;
        hi[k] = law.mean() + 10.0 * sd;
    }
    let g = joint_density(&p, 1.0, &GridSpec::square(lo, hi, 512).unwrap(), InversionOptions::default()).unwrap();

    const DRAWS: usize = 1_000_000;
    let draws = WvagSampler::new(&p, 1.0).unwrap().sample(DRAWS, RngStream::new(31));
    let n = DRAWS as f64;
    let mean = [0, 1].map(|k| draws.iter().map(|y| y[k]).sum::<f64>() / n);
    let cov = |k: usize, l: usize| draws.iter().map(|y| (y[k] - mean[k]) * (y[l] - mean[l])).sum::<f64>() / (n - 1.0);
    let f = n.powf(-1.0 / 3.0);
    let h = [f * cov(0, 0), f * cov(0, 1), f * cov(1, 1)];
    let kern = Kernel::new(h);
    let reach = [8.0 * h[0].sqrt(), 8.0 * h[2].sqrt()];
    let sd = [cov(0, 0).sqrt(), cov(1, 1).sqrt()];
    let spec = g.spec;
    let cell = spec.step(0) * spec.step(1);
    let mut outside = 0;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let y = [mean[0] + sd[0] * (-2.5 + 5.0 * i as f64 / 19.0), mean[1] + sd[1] * (-2.5 + 5.0 * j as f64 / 19.0)];
            let kde = draws
                .iter()
                .map(|d| [y[0] - d[0], y[1] - d[1]])
                .filter(|u| u[0].abs() < reach[0] && u[1].abs() < reach[1])
                .map(|u| kern.eval(u))
                .sum::<f64>()
                / n;
            // the KDE's expectation and variance under the grid density
            let (mut smooth, mut smooth2) = (0.0, 0.0);
            for a in 0..spec.n[0] {
                let u0 = y[0] - spec.node(0, a);
                if u0.abs() >= reach[0] {
                    continue;
                }
                for b in 0..spec.n[1] {
                    let u1 = y[1] - spec.node(1, b);
                    if u1.abs() < reach[1] {
                        let k = kern.eval([u0, u1]);
                        smooth += g.value(a, b) * k;
                        smooth2 += g.value(a, b) * k * k;
                    }
                }
            }
            smooth *= cell;
            smooth2 *= cell;
            let z = (kde - smooth).abs() / ((smooth2 - smooth * smooth) / n).sqrt();
            worst = worst.max(z);
            outside += usize::from(z > 3.0);
        }
    }
    let elapsed = start.elapsed();
    let pass = (g.integral - 1.0).abs() < 1e-3 && outside <= BAND_EXCEEDANCES && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "integral {:.6}, {outside}/400 lattice points beyond 3 SE (largest {worst:.2}), {:.0}s",
            g.integral,
            elapsed.as_secs_f64()
        ),
    )
}

// 4. Moment oracles

/// `ln E exp(<s, Y(c)>)` at complex `s`.
fn cgf(p: &Params, c: f64, s: [Complex<f64>; 2]) -> Complex<f64> {
    let (al, mu, sg, m) = (p.alpha(), p.mu(), p.sigma(), p.m());
    let amin = al[0].min(al[1]);
    let l0 = s[0] * al[0] * mu[0]
        + s[1] * al[1] * mu[1]
        + (s[0] * s[0] * al[0] * sg.get(0, 0) + s[1] * s[1] * al[1] * sg.get(1, 1)) * 0.5
        + s[0] * s[1] * amin * sg.get(0, 1);
    let one = Complex::new(1.0, 0.0);
    let mut k = s[0] * m[0] + s[1] * m[1] - (one - l0).ln() * p.a();
    for (j, b) in p.beta().0.iter().enumerate() {
        let lj = s[j] * al[j] * mu[j] + s[j] * s[j] * 0.5 * al[j] * sg.get(j, j);
        k -= (one - lj).ln() * *b;
    }
    k * c
}

/// Derivatives `d^(i+j) f / ds1^i ds2^j` at 0 for `i + j <= 4`, from
/// trapezoid sums of `f` over a polydisc.
fn taylor(f: impl Fn([Complex<f64>; 2]) -> Complex<f64>, r: [f64; 2]) -> [[f64; 5]; 5] {
    const M: usize = 64;
    let mut coef = [[Complex::new(0.0, 0.0); 5]; 5];
    for a in 0..M {
        let pa = 2.0 * PI * a as f64 / M as f64;
        for b in 0..M {
            let pb = 2.0 * PI * b as f64 / M as f64;
            let v = f([Complex::from_polar(r[0], pa), Complex::from_polar(r[1], pb)]);
            for i in 0..5 {
                for j in 0..5 - i {
                    coef[i][j] += v * Complex::from_polar(1.0, -(i as f64 * pa + j as f64 * pb));
                }
            }
        }
    }
    let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
    let mut d = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 - i {
            d[i][j] = coef[i][j].re / ((M * M) as f64 * r[0].powi(i as i32) * r[1].powi(j as i32)) * fact[i] * fact[j];
        }
    }
    d
}

/// Mean and central moments from the continued characteristic function.
fn contour_moments(p: &Params, c: f64) -> ([f64; 2], [[f64; 5]; 5]) {
    let (al, mu, sg) = (p.alpha(), p.mu(), p.sigma());
    // keep the subordinator arguments within |L| <= 0.1
    let r = [0, 1].map(|k| (0.05 / (al[k] * mu[k].abs()).max(1e-12)).min((0.05 / (al[k] * sg.get(k, k))).sqrt()));
    let kappa = taylor(|s| cgf(p, c, s), r);
    let mean = [kappa[1][0], kappa[0][1]];
    let central = taylor(|s| (cgf(p, c, s) - s[0] * mean[0] - s[1] * mean[1]).exp(), r);
    (mean, central)
}

fn moment_oracles() -> Outcome {
    let mut r = runner();
    let params = feasible();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = draw(&params, &mut r);
        let c = draw(&(0.1f64..2.0), &mut r);
        let got = analytic_moments(&p, c);
        let (mean, cm) = contour_moments(&p, c);
        let sd = [cm[2][0].sqrt(), cm[0][2].sqrt()];
        let pairs = [
            (got.mean[0], mean[0], sd[0]),
            (got.mean[1], mean[1], sd[1]),
            (got.m2[0], cm[2][0], sd[0].powi(2)),
            (got.m2[1], cm[0][2], sd[1].powi(2)),
            (got.m3[0], cm[3][0], sd[0].powi(3)),
            (got.m3[1], cm[0][3], sd[1].powi(3)),
            (got.m4[0], cm[4][0], sd[0].powi(4)),
            (got.m4[1], cm[0][4], sd[1].powi(4)),
            (got.cross1, cm[1][1], sd[0] * sd[1]),
            (got.cross2, cm[2][2], (sd[0] * sd[1]).powi(2)),
        ];
        for (g, w, scale) in pairs {
            worst = worst.max((g - w).abs() / w.abs().max(1e-6 * scale));
        }
    }

    let p = truth();
    let m = analytic_moments(&p, 1.0);
    let draws = WvagSampler::new(&p, 1.0).unwrap().sample(1_000_000, RngStream::new(21));
    let c = m.mean;
    let mut z: Vec<(String, f64)> = Vec::new();
    let mut check = |label: String, f: &dyn Fn(&[f64; 2]) -> f64, want: f64| {
        let (v, se) = mean_se(draws.iter().map(f));
        z.push((label, (v - want).abs() / se));
    };
    for k in 0..2 {
        check(format!("mean {k}"), &|y| y[k], m.mean[k]);
        check(format!("m2 {k}"), &|y| (y[k] - c[k]).powi(2), m.m2[k]);
        check(format!("m3 {k}"), &|y| (y[k] - c[k]).powi(3), m.m3[k]);
        check(format!("m4 {k}"), &|y| (y[k] - c[k]).powi(4), m.m4[k]);
    }
    check("covariance".into(), &|y| (y[0] - c[0]) * (y[1] - c[1]), m.cross1);
    check("cross2".into(), &|y| ((y[0] - c[0]) * (y[1] - c[1])).powi(2), m.cross2);
    let (label, zmax) = z.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let cov_ok = (m.cross1 - 0.3456).abs() < 1e-12;
    let pass = worst < 1e-6 && zmax <= 3.0 && cov_ok;
    outcome(
        pass,
        format!("contour rel err {worst:.1e} over 100 params; covariance {:.4}; largest MC deviation {zmax:.2} SE ({label})", m.cross1),
    )
}

// 5 to 7. Desk-scale studies

const PAPER_C1_RMSE: [(Method, [f64; 10]); 3] = [
    (Method::Mom, [0.424, 0.342, 0.216, 0.097, 0.131, 0.078, 0.088, 0.335, 0.089, 0.120]),
    (Method::Mle, [0.242, 0.111, 0.094, 0.053, 0.083, 0.071, 0.086, 0.192, 0.045, 0.070]),
    (Method::Dme, [0.171, 0.127, 0.126, 0.062, 0.121, 0.084, 0.113, 0.154, 0.051, 0.110]),
];
const PAPER_C1_NEG_LOG_LIK: [(Method, f64); 3] = [(Method::Mom, 2802.3), (Method::Mle, 2787.5), (Method::Dme, 2791.7)];
const DESK_REPS: usize = 20;

fn summary(r: &StudyResult, m: Method) -> &wvag::study::MethodSummary {
    r.summaries.iter().find(|s| s.method == m).expect("method in study")
}

fn table2() -> Outcome {
    let start = Instant::now();
    let cfg = StudyConfig { reps: DESK_REPS, seed: 5, ..StudyConfig::default() };
    let r = run_study(&cfg).unwrap();
    let truth = r.truth.to_vector();
    let mut notes = Vec::new();
    let mut pass = true;
    for (m, rmse) in PAPER_C1_RMSE {
        let s = summary(&r, m);
        for j in 0..10 {
            if (s.mean[j] - truth[j]).abs() > 2.0 * rmse[j] {
                pass = false;
                notes.push(format!("{} {} mean {:.3}", m.name(), wvag::model::PARAM_NAMES[j], s.mean[j]));
            }
        }
        if s.failures > 0 {
            notes.push(format!("{} {} failed reps", m.name(), s.failures));
        }
    }
    let nll = |m| summary(&r, m).mean_neg_log_likelihood.unwrap_or(f64::NAN);
    for (m, want) in PAPER_C1_NEG_LOG_LIK {
        // NaN (missing statistic) fails
        pass &= (nll(m) - want).abs() <= 0.01 * want;
    }
    let chi = |m| summary(&r, m).mean_chi2.unwrap_or(f64::NAN);
    let ks = |m| summary(&r, m).mean_ks.unwrap_or(f64::NAN);
    pass &= chi(Method::Mle) <= chi(Method::Dme) && chi(Method::Dme) <= chi(Method::Mom);
    pass &= ks(Method::Mom) > ks(Method::Mle) && ks(Method::Mom) > ks(Method::Dme);
    let elapsed = start.elapsed();
    pass &= elapsed <= Duration::from_secs(7200);
    let fmt = |f: &dyn Fn(Method) -> f64, d: usize| {
        Method::ALL.iter().map(|&m| format!("{:.*}", d, f(m))).collect::<Vec<_>>().join("/")
    };
    outcome(
        pass,
        format!(
            "{DESK_REPS} reps MOM/MLE/DME: -lnL {}, chi2 {}, KS {}; {:.0}s{}",
            fmt(&nll, 1),
            fmt(&chi, 1),
            fmt(&ks, 4),
            elapsed.as_secs_f64(),
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join(", ")) }
        ),
    )
}

fn table3() -> Outcome {
    let mut cfg = StudyConfig { reps: DESK_REPS, c: 0.1, seed: 6, ..StudyConfig::default() };
    cfg.fit.override_invertibility = true;
    let r = run_study(&cfg).unwrap();
    let ks = |m| summary(&r, m).mean_ks.unwrap_or(f64::NAN);
    let (mom, mle, dme) = (ks(Method::Mom), ks(Method::Mle), ks(Method::Dme));
    let pass = dme < mle && mle < mom && dme < 0.12 && mom > 0.2;
    let failures: usize = r.summaries.iter().map(|s| s.failures).sum();
    outcome(pass, format!("{DESK_REPS} reps mean KS MOM {mom:.4}, MLE {mle:.4}, DME {dme:.4}; {failures} failed fits"))
}

fn quantile_choice() -> Outcome {
    let cfg = StudyConfig { reps: DESK_REPS, seed: 7, ..StudyConfig::default() };
    let r = quantile_study(&cfg, &standard_quantile_sets()).unwrap();
    let ks: Vec<f64> = r.summaries.iter().map(|s| s.mean_ks.unwrap_or(f64::NAN)).collect();
    let lo = ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pass = ks[0] <= lo && (hi - lo) <= 0.10 * lo;
    let listed: Vec<String> = r.summaries.iter().zip(&ks).map(|(s, k)| format!("{} {k:.4}", s.label)).collect();
    outcome(pass, format!("mean KS {}; spread {:.1}%", listed.join(", "), 100.0 * (hi - lo) / lo))
}

// 8. Goodness-of-fit machinery

fn gof_machinery() -> Outcome {
    let p = truth();
    let mle = MleConfig::default();

    // uniformity of the transform on data drawn from a fitted model
    let base = simulate_sample(&p, 1.0, 1000, RngStream::new(81)).unwrap();
    let fitted = fit_mle(&base, Constraints::default(), &mle).unwrap().params;
    let big = simulate_sample(&fitted, 1.0, 10_000, RngStream::new(82)).unwrap();
    let chi = rosenblatt_chi2(&fitted, &big, &GofConfig::default()).unwrap().statistic;
    let chi_p = chi2_sf(chi, 99.0);
    let chi_ok = chi < 99.0 + 4.0 * 198f64.sqrt() && chi_p > 0.001;

    let mut r = runner();
    let cloud = proptest::collection::vec((0.0f64..6.0, 0.0f64..6.0).prop_map(|(x, y)| [x.floor(), y.floor()]), 1..80);
    let fine = proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y)| [x, y]), 1..80);
    let mut mismatches = 0;
    for i in 0..100 {
        let (a, b) = if i % 2 == 0 { (draw(&cloud, &mut r), draw(&cloud, &mut r)) } else { (draw(&fine, &mut r), draw(&fine, &mut r)) };
        mismatches += usize::from(peacock_ks(&a, &b) != peacock_ks_brute(&a, &b));
    }

    // size: data with mu = 0, testing mu = 0
    let sd_truth = p.with_mu(vec![0.0, 0.0]).unwrap();
    let mu_null = Constraints { sigma12_zero: false, mu_zero: true };
    let mut rejections = 0;
    let mut d_sum = 0.0;
    const SIZE_REPS: u64 = 50;
    for rep in 0..SIZE_REPS {
        let s = simulate_sample(&sd_truth, 1.0, 1000, RngStream::new(83).substream(rep)).unwrap();
        let t = likelihood_ratio_test(&s, mu_null, Constraints::default(), &mle).unwrap();
        rejections += usize::from(t.rejects(0.05));
        d_sum += t.d;
    }
    let size = rejections as f64 / SIZE_REPS as f64;

    // power: sigma_12 = 0.6 data, testing sigma_12 = 0
    let mut power = 0;
    for rep in 0..20 {
        let s = simulate_sample(&p, 1.0, 1000, RngStream::new(84).substream(rep)).unwrap();
        power += usize::from(likelihood_ratio_test(&s, ModelKind::Vag.constraints(), Constraints::default(), &mle).unwrap().rejects(0.05));
    }

    let pass = chi_ok && mismatches == 0 && (0.01..=0.12).contains(&size) && power >= 18;
    outcome(
        pass,
        format!(
            "self-fitted chi2 {chi:.1} (p {chi_p:.3}); Peacock fast/brute mismatches {mismatches}/100; LRT size {:.0}% over {SIZE_REPS} (mean D {:.2}, 2 under the null), power {power}/20",
            100.0 * size,
            d_sum / SIZE_REPS as f64
        ),
    )
}

// 9 and 10. Command line

fn wvag(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wvag")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!("wvag {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic_prices.csv")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn fixture_study() -> Outcome {
    let run = || -> Result<String, String> {
        let dir = TempDir::new().map_err(|e| e.to_string())?;
        let returns = dir.path().join("returns.csv");
        wvag(&["ingest", s(&fixture()), "--out", s(&returns)])?;
        let lrt = json(&wvag(&["lrt", s(&returns), "--null", "sigma12"])?);
        let p = lrt["p_value"].as_f64().unwrap();
        let chi = |method: &str| -> Result<f64, String> {
            let r = json(&wvag(&["fit", s(&returns), "--method", method])?);
            r["gof"]["chi2"]["value"]["statistic"].as_f64().ok_or_else(|| format!("{method}: chi2 unavailable"))
        };
        let (mle, dme) = (chi("mle")?, chi("dme")?);
        let rel = (mle - dme).abs() / mle.min(dme);
        let verdict = if p < 0.01 && rel <= 0.25 { "PASS" } else { "FAIL" };
        Ok(format!("{verdict}|LRT sigma12 D {:.1}, p {p:.2e}; chi2 MLE {mle:.1}, DME {dme:.1} ({:.1}% apart)", lrt["d"].as_f64().unwrap(), 100.0 * rel))
    };
    match run() {
        Ok(line) => {
            let (v, d) = line.split_once('|').unwrap();
            outcome(v == "PASS", d.to_string())
        }
        Err(e) => outcome(false, e),
    }
}

/// Every file under `dir`, by name.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let sample_dir = TempDir::new().unwrap();
    let sample = sample_dir.path().join("sample.csv");
    if let Err(e) = wvag(&["simulate", "--N", "500", "--seed", "3", "--out", s(&sample)]) {
        return outcome(false, e);
    }
    let params = sample_dir.path().join("truth.json");
    fs::write(&params, serde_json::to_string(&truth()).unwrap()).unwrap();
    let cfg = sample_dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"dme": {"simulations": 2000}, "bootstrap": 3}"#).unwrap();
    let study_cfg = sample_dir.path().join("study.json");
    fs::write(&study_cfg, r#"{"fit": {"dme": {"simulations": 1000}}}"#).unwrap();

    // each command writes into a fresh directory `{out}`; stdout is kept too
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("fixture", vec!["fixture", "--out", "{out}/prices.csv"]),
        ("ingest", vec!["ingest", s(&fixture()), "--out", "{out}/returns.csv"]),
        ("simulate", vec!["simulate", "--c", "0.1", "--N", "300", "--seed", "9", "--out", "{out}/sim.csv"]),
        ("fit mom", vec!["fit", s(&sample), "--method", "mom", "--seed", "4", "--config", s(&cfg)]),
        ("fit mle", vec!["fit", s(&sample), "--method", "mle", "--seed", "4"]),
        ("fit dme", vec!["fit", s(&sample), "--method", "dme", "--seed", "4", "--config", s(&cfg), "--surface", "{out}/surface.csv"]),
        ("fit vag", vec!["fit", s(&sample), "--model", "vag", "--method", "dme", "--seed", "4", "--out", "{out}/vag.json"]),
        ("study", vec!["study", "--N", "500", "--reps", "2", "--config", s(&study_cfg), "--json", "{out}/reps.json"]),
        ("quantile study", vec!["study", "--N", "500", "--reps", "1", "--quantile-study", "--config", s(&study_cfg)]),
        ("lrt", vec!["lrt", s(&sample), "--null", "mu"]),
        ("density", vec!["density", "--params", s(&params), "--res", "128", "--sample", s(&sample), "--out", "{out}/d.csv"]),
    ]
    .into_iter()
    .map(|(n, a)| (n, a.into_iter().map(String::from).collect()))
    .collect();

    let mut differing = Vec::new();
    for (name, args) in &commands {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let out = TempDir::new().unwrap();
            let a: Vec<String> = args.iter().map(|x| x.replace("{out}", s(out.path()))).collect();
            let a: Vec<&str> = a.iter().map(String::as_str).collect();
            match wvag(&a) {
                Ok(stdout) => runs.push((stdout, snapshot(out.path()))),
                Err(e) => return outcome(false, e),
            }
        }
        if runs[0] != runs[1] {
            differing.push(*name);
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} commands byte-identical across two runs", commands.len())
        } else {
            format!("outputs differ for {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "invertibility gate", invertibility_gate),
        (2, "exponent identities", exponent_identities),
        (3, "inversion fidelity", inversion_fidelity),
        (4, "moment oracles", moment_oracles),
        (5, "desk-scale study at c = 1", table2),
        (6, "desk-scale study at c = 0.1", table3),
        (7, "quantile study", quantile_choice),
        (8, "goodness-of-fit machinery", gof_machinery),
        (9, "synthetic fixture", fixture_study),
        (10, "determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!(
            "criterion {n:>2} {}: {name} [{:.0}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: criteria {failed:?} fail");
        if std::env::var_os("WVAG_ACCEPTANCE_STRICT").is_some() {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    }
}
