//! Analytic moments of `Y(c)` and the method-of-moments calibrator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Constraints, WvagParams};
use crate::optim::{nelder_mead, Free, NmOptions, NmResult, Reparam};
use crate::scalar::Field;
use crate::simulate::{ReturnSample, RngStream};

const ORDER: usize = 5;

/// Bivariate polynomial truncated at total degree four.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Poly<T>([[T; ORDER]; ORDER]);

impl<T: Field> Poly<T> {
    fn zero() -> Self {
        Poly([[T::zero(); ORDER]; ORDER])
    }

    fn add(&self, o: &Self, w: T) -> Self {
        let mut r = *self;
        for i in 0..ORDER {
            for j in 0..ORDER - i {
                r.0[i][j] = r.0[i][j] + w * o.0[i][j];
            }
        }
        r
    }

    fn mul(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..ORDER {
            for j in 0..ORDER - i {
                if self.0[i][j] == T::zero() {
                    continue;
                }
                for k in 0..ORDER - i - j {
                    for l in 0..ORDER - i - j - k {
                        r.0[i + k][j + l] = r.0[i + k][j + l] + self.0[i][j] * o.0[k][l];
                    }
                }
            }
        }
        r
    }

    /// `-ln(1 - L)` for `L` without constant term.
    fn neg_log_one_minus(&self) -> Self {
        let mut out = Self::zero();
        let mut pow = *self;
        for j in 1..ORDER {
            out = out.add(&pow, T::one() / T::from_usize(j).expect("small integer"));
            pow = pow.mul(self);
        }
        out
    }
}

/// Joint cumulants `kappa[i][j]` of `(Y_1(c), Y_2(c))` for `i + j <= 4`.
pub fn cumulants<T: Field>(p: &WvagParams<T>, c: T) -> [[T; ORDER]; ORDER] {
    assert_eq!(p.dim(), 2, "moments are implemented for the bivariate model");
    let half = T::one() / (T::one() + T::one());
    let alpha = p.alpha();
    let mu = p.mu();
    let s = p.sigma();
    let amin = if alpha[0] < alpha[1] { alpha[0] } else { alpha[1] };

    // CGF K(s) = c <m, s> + c a (-ln(1 - L_0)) + sum_k c beta_k (-ln(1 - L_k))
    let mut l0 = Poly::zero();
    l0.0[1][0] = alpha[0] * mu[0];
    l0.0[0][1] = alpha[1] * mu[1];
    l0.0[2][0] = half * alpha[0] * s.get(0, 0);
    l0.0[0][2] = half * alpha[1] * s.get(1, 1);
    l0.0[1][1] = amin * s.get(0, 1);

    let mut k = Poly::zero().add(&l0.neg_log_one_minus(), c * p.a());
    let beta = p.beta().0;
    for comp in 0..2 {
        let mut lk = Poly::zero();
        let (d1, d2) = if comp == 0 { (1, 0) } else { (0, 1) };
        lk.0[d1][d2] = alpha[comp] * mu[comp];
        lk.0[2 * d1][2 * d2] = half * alpha[comp] * s.get(comp, comp);
        k = k.add(&lk.neg_log_one_minus(), c * beta[comp]);
    }
    k.0[1][0] = k.0[1][0] + c * p.m()[0];
    k.0[0][1] = k.0[0][1] + c * p.m()[1];

    let fact = |n: usize| (1..=n).fold(T::one(), |acc, i| acc * T::from_usize(i).expect("small integer"));
    let mut kappa = [[T::zero(); ORDER]; ORDER];
    for i in 0..ORDER {
        for j in 0..ORDER - i {
            kappa[i][j] = fact(i) * fact(j) * k.0[i][j];
        }
    }
    kappa
}

/// Means, central moments of orders 2-4 per component, and the cross
/// moments `E[(Y_1 - EY_1)^p (Y_2 - EY_2)^p]` for `p = 1, 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet<T> {
    pub mean: [T; 2],
    pub m2: [T; 2],
    pub m3: [T; 2],
    pub m4: [T; 2],
    pub cross1: T,
    pub cross2: T,
}

pub fn analytic_moments<T: Field>(p: &WvagParams<T>, c: T) -> MomentSet<T> {
    let k = cumulants(p, c);
    let three = T::from_usize(3).expect("small integer");
    let two = T::one() + T::one();
    MomentSet {
        mean: [k[1][0], k[0][1]],
        m2: [k[2][0], k[0][2]],
        m3: [k[3][0], k[0][3]],
        m4: [k[4][0] + three * k[2][0] * k[2][0], k[0][4] + three * k[0][2] * k[0][2]],
        cross1: k[1][1],
        cross2: k[2][2] + k[2][0] * k[0][2] + two * k[1][1] * k[1][1],
    }
}

/// Sample moments with the biased `1/N` convention.
pub fn sample_moments(obs: &[[f64; 2]]) -> MomentSet<f64> {
    let n = obs.len() as f64;
    let mean = [obs.iter().map(|y| y[0]).sum::<f64>() / n, obs.iter().map(|y| y[1]).sum::<f64>() / n];
    let mut m = MomentSet { mean, m2: [0.0; 2], m3: [0.0; 2], m4: [0.0; 2], cross1: 0.0, cross2: 0.0 };
    for y in obs {
        let d = [y[0] - mean[0], y[1] - mean[1]];
        for k in 0..2 {
            let d2 = d[k] * d[k];
            m.m2[k] += d2;
            m.m3[k] += d2 * d[k];
            m.m4[k] += d2 * d2;
        }
        m.cross1 += d[0] * d[1];
        m.cross2 += d[0] * d[0] * d[1] * d[1];
    }
    for k in 0..2 {
        m.m2[k] /= n;
        m.m3[k] /= n;
        m.m4[k] /= n;
    }
    m.cross1 /= n;
    m.cross2 /= n;
    m
}

impl MomentSet<f64> {
    fn marginal(&self, k: usize) -> [f64; 4] {
        [self.mean[k], self.m2[k], self.m3[k], self.m4[k]]
    }
}

/// Which moment groups enter a least-squares objective.
#[derive(Clone, Copy, Debug)]
struct Targets {
    marginal: [bool; 2],
    cross1: bool,
    cross2: bool,
}

fn objective(model: &MomentSet<f64>, data: &MomentSet<f64>, t: Targets) -> f64 {
    let r = |m: f64, s: f64| (m - s) / s.abs().max(1e-8);
    let mut sum = 0.0;
    for k in 0..2 {
        if t.marginal[k] {
            for (m, s) in model.marginal(k).iter().zip(data.marginal(k)) {
                sum += r(*m, s).powi(2);
            }
        }
    }
    if t.cross1 {
        sum += r(model.cross1, data.cross1).powi(2);
    }
    if t.cross2 {
        sum += r(model.cross2, data.cross2).powi(2);
    }
    sum
}

/// Method-of-moments settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomConfig {
    pub nm: NmOptions,
    /// Extra starts from jittered copies of the initial point, per stage.
    pub restarts: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for MomConfig {
    fn default() -> Self {
        MomConfig {
            nm: NmOptions { max_evals: 4000, ftol: 0.0, xtol: 1e-8, step: 0.1 },
            restarts: 3,
            jitter: 0.1,
            seed: 0x6d6f6d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomFit {
    pub params: WvagParams<f64>,
    /// Least-squares objective at the end of each stage.
    pub stage_objectives: [f64; 3],
    pub evals: usize,
    pub converged: bool,
    /// Set when no stage improved on its starting point.
    pub stuck_at_initials: bool,
}

fn run_stage<F: Fn(&WvagParams<f64>) -> f64>(r: &Reparam, start: &WvagParams<f64>, f: F, cfg: &MomConfig, stage: u64) -> (NmResult, f64) {
    let obj = |x: &[f64]| r.decode(x).map(|p| f(&p)).unwrap_or(f64::INFINITY);
    let x0 = r.encode(start);
    let f0 = obj(&x0);
    let mut best = nelder_mead(obj, &x0, &cfg.nm);
    let mut rng = RngStream { seed: cfg.seed, stream: stage }.rng();
    for _ in 0..cfg.restarts {
        let xj: Vec<f64> = x0.iter().map(|v| v + cfg.jitter * rng.sample::<f64, _>(StandardNormal)).collect();
        let res = nelder_mead(obj, &xj, &cfg.nm);
        let evals = best.evals + res.evals;
        if res.f < best.f {
            best = NmResult { evals, ..res };
        } else {
            best.evals = evals;
        }
    }
    (best, f0)
}

/// Closed-form starting values for one marginal from its first four
/// cumulants, assuming a small drift skew.
fn marginal_initials(k: [f64; 4], c: f64) -> (f64, f64, f64, f64) {
    let sigma2 = (k[1] / c).max(1e-300);
    let alpha = if k[3] > 0.0 { (k[3] * c / (3.0 * k[1] * k[1])).clamp(1e-3, 1e3) } else { 0.05 };
    let mu = (k[2] / (3.0 * sigma2 * alpha * c)).clamp(-10.0 * sigma2.sqrt(), 10.0 * sigma2.sqrt());
    let s = if sigma2 - alpha * mu * mu > 0.1 * sigma2 { sigma2 - alpha * mu * mu } else { 0.5 * sigma2 };
    (mu, alpha, s, k[0] / c - mu)
}

/// Three-stage least-squares fit of analytic to target moments.
pub fn fit_mom_to(data: &MomentSet<f64>, c: f64, cons: Constraints, cfg: &MomConfig) -> Result<MomFit> {
    if !(data.m2[0] > 0.0 && data.m2[1] > 0.0) {
        return Err(Error::InvalidInput("sample variance is zero".into()));
    }
    // Stage 1: marginals.
    let mut alpha = [0.0; 2];
    let mut mu = [0.0; 2];
    let mut s = [0.0; 2];
    let mut m = [0.0; 2];
    for k in 0..2 {
        let kap = [data.mean[k], data.m2[k], data.m3[k], data.m4[k] - 3.0 * data.m2[k] * data.m2[k]];
        let (mu0, a0, s0, m0) = marginal_initials(kap, c);
        alpha[k] = a0;
        mu[k] = if cons.mu_zero { 0.0 } else { mu0 };
        s[k] = s0;
        m[k] = if cons.mu_zero { kap[0] / c } else { m0 };
    }
    let tiny_a = 1e-3 / alpha[0].max(alpha[1]).max(1e3);
    let base = WvagParams::bivariate(tiny_a, alpha, mu, [[s[0], 0.0], [0.0, s[1]]], m)?;
    let mut current = base.clone();
    let mut evals = 0;
    let mut converged = true;
    let mut improved_any = false;
    let mut stage1_obj = 0.0;
    for k in 0..2 {
        let mut free = vec![Free::Alpha(k), Free::SigmaDiag(k), Free::M(k)];
        if !cons.mu_zero {
            free.push(Free::Mu(k));
        }
        let r = Reparam::new(current.clone(), free);
        let mut tg = Targets { marginal: [false; 2], cross1: false, cross2: false };
        tg.marginal[k] = true;
        let (res, f0) = run_stage(&r, &current, |p| objective(&analytic_moments(p, c), data, tg), cfg, 1 + k as u64);
        evals += res.evals;
        converged &= res.converged;
        if res.f < f0 {
            improved_any = true;
            current = r.decode(&res.x)?;
        }
        stage1_obj += res.f.min(f0);
    }

    // Stage 2: dependence parameters with the marginals fixed.
    let amax = current.a_upper_bound();
    let cross_tg = Targets { marginal: [false; 2], cross1: !cons.sigma12_zero, cross2: true };
    let rho_for = |a: f64, p: &WvagParams<f64>| -> f64 {
        if cons.sigma12_zero {
            return 0.0;
        }
        let (al, mu_, sg) = (p.alpha(), p.mu(), p.sigma());
        let cov = data.cross1 / c - a * al[0] * al[1] * mu_[0] * mu_[1];
        (cov / (a * al[0].min(al[1]) * (sg.get(0, 0) * sg.get(1, 1)).sqrt())).clamp(-0.95, 0.95)
    };
    let mut start = None;
    for i in 1..10 {
        let a = amax * i as f64 / 10.0;
        let p = current.clone();
        let rho = rho_for(a, &p);
        let s12 = rho * (p.sigma().get(0, 0) * p.sigma().get(1, 1)).sqrt();
        let cand = WvagParams::bivariate(a, [p.alpha()[0], p.alpha()[1]], [p.mu()[0], p.mu()[1]], [[p.sigma().get(0, 0), s12], [s12, p.sigma().get(1, 1)]], [p.m()[0], p.m()[1]])?;
        let v = objective(&analytic_moments(&cand, c), data, cross_tg);
        if start.as_ref().is_none_or(|(bv, _)| v < *bv) {
            start = Some((v, cand));
        }
    }
    let (_, stage2_start) = start.expect("nonempty a grid");
    let free2 = if cons.sigma12_zero { vec![Free::A] } else { vec![Free::A, Free::Rho] };
    let r2 = Reparam::new(stage2_start.clone(), free2);
    let (res2, f20) = run_stage(&r2, &stage2_start, |p| objective(&analytic_moments(p, c), data, cross_tg), cfg, 3);
    evals += res2.evals;
    converged &= res2.converged;
    let stage2 = if res2.f < f20 {
        improved_any = true;
        r2.decode(&res2.x)?
    } else {
        stage2_start
    };

    // Stage 3: everything, from the stage-2 point.
    let all_tg = Targets { marginal: [true; 2], cross1: !cons.sigma12_zero, cross2: true };
    let r3 = Reparam::all(stage2.clone(), cons.sigma12_zero, cons.mu_zero);
    let (res3, f30) = run_stage(&r3, &stage2, |p| objective(&analytic_moments(p, c), data, all_tg), cfg, 4);
    evals += res3.evals;
    converged &= res3.converged;
    // keep the stage-2 point unless stage 3 is a real improvement
    let params = if res3.f < f30 * (1.0 - 1e-6) - 1e-18 {
        improved_any = true;
        r3.decode(&res3.x)?
    } else {
        stage2
    };
    let params = cons.apply(&params)?;
    let final_obj = objective(&analytic_moments(&params, c), data, all_tg);
    Ok(MomFit {
        params,
        stage_objectives: [stage1_obj, res2.f.min(f20), final_obj],
        evals,
        converged,
        stuck_at_initials: !improved_any,
    })
}

/// Method-of-moments estimate from a return sample.
pub fn fit_mom(sample: &ReturnSample, cons: Constraints, cfg: &MomConfig) -> Result<MomFit> {
    if sample.len() < 10 {
        return Err(Error::InvalidInput(format!("method of moments needs N >= 10, got {}", sample.len())));
    }
    fit_mom_to(&sample_moments(&sample.obs), sample.c, cons, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn truth_exact() -> WvagParams<Rational64> {
        WvagParams::bivariate(
            r(1, 1),
            [r(4, 5), r(3, 5)],
            [r(1, 10), r(-3, 10)],
            [[r(1, 1), r(3, 5)], [r(3, 5), r(6, 5)]],
            [r(-1, 10), r(3, 10)],
        )
        .unwrap()
    }

    fn truth() -> WvagParams<f64> {
        WvagParams::bivariate(1.0, [0.8, 0.6], [0.1, -0.3], [[1.0, 0.6], [0.6, 1.2]], [-0.1, 0.3]).unwrap()
    }

    #[test]
    fn exact_low_order_moments_at_truth() {
        let ms = analytic_moments(&truth_exact(), r(1, 1));
        assert_eq!(ms.mean, [r(0, 1), r(0, 1)]);
        assert_eq!(ms.m2[0], r(1008, 1000));
        assert_eq!(ms.m2[1], r(12, 10) + r(6, 10) * r(9, 100));
        assert_eq!(ms.cross1, r(3456, 10000));
        let half = analytic_moments(&truth_exact(), r(1, 2));
        assert_eq!(half.mean, [r(0, 1), r(0, 1)]);
        assert_eq!(half.m2[0], r(504, 1000));
    }

    #[test]
    fn marginal_cumulants_match_univariate_vg() {
        let p = truth();
        let c = 0.7;
        let k = cumulants(&p, c);
        for comp in 0..2 {
            let (al, mu, s) = (p.alpha()[comp], p.mu()[comp], p.sigma().get(comp, comp));
            let expect = [
                (p.m()[comp] + mu) * c,
                (s + al * mu * mu) * c,
                (3.0 * s * al * mu + 2.0 * al * al * mu.powi(3)) * c,
                (3.0 * s * s * al + 12.0 * s * al * al * mu * mu + 6.0 * al.powi(3) * mu.powi(4)) * c,
            ];
            for (order, e) in expect.iter().enumerate() {
                let got = if comp == 0 { k[order + 1][0] } else { k[0][order + 1] };
                assert!((got - e).abs() < 1e-12, "comp {comp} order {}: {got} vs {e}", order + 1);
            }
        }
    }

    #[test]
    fn drift_moves_means_only() {
        let p = truth();
        let q = p.with_drift(vec![3.0, -2.0]).unwrap();
        let (a, b) = (analytic_moments(&p, 1.3), analytic_moments(&q, 1.3));
        assert!((b.mean[0] - a.mean[0] - 3.1 * 1.3).abs() < 1e-12);
        assert_eq!(a.m2, b.m2);
        assert_eq!(a.m4, b.m4);
        assert_eq!(a.cross2, b.cross2);
    }

    #[test]
    fn sample_moments_biased() {
        let m = sample_moments(&[[1.0, 2.0], [3.0, 6.0]]);
        assert_eq!(m.mean, [2.0, 4.0]);
        assert_eq!(m.m2, [1.0, 4.0]);
        assert_eq!(m.m3, [0.0, 0.0]);
        assert_eq!(m.cross1, 2.0);
        assert_eq!(m.cross2, 4.0);
    }

    #[test]
    fn exact_moment_fixture_recovers_parameters() {
        let p = truth();
        let target = analytic_moments(&p, 1.0);
        let fit = fit_mom_to(&target, 1.0, Constraints::default(), &MomConfig::default()).unwrap();
        for (x, y) in p.to_vector().iter().zip(fit.params.to_vector()) {
            assert!((x - y).abs() < 1e-4, "{:?}", fit.params.to_vector());
        }
        assert!(fit.stage_objectives[2] < 1e-12);
    }

    #[test]
    fn vag_pins_sigma12() {
        let p = WvagParams::bivariate(1.0, [0.8, 0.6], [0.1, -0.3], [[1.0, 0.0], [0.0, 1.2]], [-0.1, 0.3]).unwrap();
        let target = analytic_moments(&p, 1.0);
        let cons = Constraints { sigma12_zero: true, mu_zero: false };
        let fit = fit_mom_to(&target, 1.0, cons, &MomConfig::default()).unwrap();
        assert_eq!(fit.params.sigma().get(0, 1), 0.0);
        assert!((fit.params.a() - 1.0).abs() < 1e-3, "{:?}", fit.params);
    }

    #[test]
    fn too_small_sample_rejected() {
        let s = ReturnSample::new(1.0, vec![[0.0, 0.1]; 5]).unwrap();
        assert!(fit_mom(&s, Constraints::default(), &MomConfig::default()).unwrap_err().is_input_error());
    }
}
