//! Staged maximum likelihood with Fourier-inverted densities.

use serde::{Deserialize, Serialize};

use crate::charfn::fourier_invertible;
use crate::error::{Error, Result};
use crate::inversion::{joint_density, marginal_law, GridSpec, InversionOptions, DENSITY_FLOOR};
use crate::model::{Constraints, WvagParams};
use crate::moments::{fit_mom, MomConfig};
use crate::optim::{nelder_mead, Free, NmOptions, NmResult, Reparam};
use crate::simulate::ReturnSample;

/// Grid resolution policy for the likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Fixed(usize),
    /// Smallest power of two in `[min, max]` whose doubling changes the
    /// log-likelihood by less than the halving tolerance per observation.
    Auto { min: usize, max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub resolution: Resolution,
    /// Per-observation log-likelihood change allowed when doubling the grid.
    pub halving_tol: f64,
    /// Box margin in marginal standard deviations beyond the sample range.
    pub margin_sd: f64,
    pub nm: NmOptions,
    pub staged: bool,
    pub override_invertibility: bool,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            resolution: Resolution::Auto { min: 128, max: 512 },
            halving_tol: 1e-3,
            margin_sd: 6.0,
            nm: NmOptions { max_evals: 2000, ftol: 1e-8, xtol: 1e-8, step: 0.1 },
            staged: true,
            override_invertibility: false,
        }
    }
}

/// Log-likelihood of the sample under `p` on a grid of `n` nodes per axis.
pub fn log_likelihood_at(p: &WvagParams<f64>, sample: &ReturnSample, n: usize, cfg: &MleConfig) -> Result<f64> {
    let spec = GridSpec::around_sample(p, sample.c, &sample.obs, cfg.margin_sd, n)?;
    let opts = InversionOptions { override_invertibility: cfg.override_invertibility };
    let grid = joint_density(p, sample.c, &spec, opts)?;
    Ok(grid.log_likelihood(&sample.obs))
}

/// Resolution selected by the grid-halving diagnostic at `p`.
pub fn choose_resolution(p: &WvagParams<f64>, sample: &ReturnSample, cfg: &MleConfig) -> Result<usize> {
    match cfg.resolution {
        Resolution::Fixed(n) => Ok(n),
        Resolution::Auto { min, max } => {
            // a grid too coarse to normalize counts as not yet converged
            let at = |n: usize| match log_likelihood_at(p, sample, n, cfg) {
                Err(Error::GridTooCoarse { .. }) if n < max => Ok(None),
                other => other.map(Some),
            };
            let mut n = min;
            let mut ln = at(n)?;
            while n < max {
                let l2 = at(2 * n)?;
                if let (Some(a), Some(b)) = (ln, l2) {
                    if (b - a).abs() / sample.len() as f64 <= cfg.halving_tol {
                        return Ok(n);
                    }
                }
                n *= 2;
                ln = l2;
            }
            Ok(max)
        }
    }
}

/// Log-likelihood under `cfg`, choosing the resolution at `p` itself.
pub fn log_likelihood(p: &WvagParams<f64>, sample: &ReturnSample, cfg: &MleConfig) -> Result<f64> {
    let n = choose_resolution(p, sample, cfg)?;
    log_likelihood_at(p, sample, n, cfg)
}

/// Univariate log-likelihood of component `k` via the closed-form density.
pub fn marginal_log_likelihood(p: &WvagParams<f64>, k: usize, data: &[f64], c: f64) -> Result<f64> {
    let law = marginal_law(p, k, c)?;
    Ok(data.iter().map(|&y| law.ln_pdf(y).clamp(DENSITY_FLOOR.ln(), 700.0)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub params: WvagParams<f64>,
    pub log_likelihood: f64,
    /// Joint log-likelihood of the best point after each stage (initial
    /// values, marginals, dependence, full). The full stage is skipped
    /// outside the integrability condition.
    pub stage_log_likelihoods: Vec<f64>,
    pub resolution: usize,
    pub evals: usize,
    pub converged: bool,
    pub overridden: bool,
}

/// Invertibility margin targeted by starting values; the density close to
/// the boundary needs very fine grids.
const START_MARGIN: f64 = 0.6;

/// Largest `a` giving an integrability margin of `target` at interval `c`
/// for the marginal parameters of `p`.
fn a_bound_for_margin(p: &WvagParams<f64>, c: f64, target: f64) -> f64 {
    let min_inv_alpha = p.alpha().iter().map(|a| 1.0 / a).fold(f64::INFINITY, f64::min);
    2.0 * (min_inv_alpha - target / c)
}

/// Moves `a` below its feasibility bound and, unless overridden, to a
/// comfortable integrability margin (or inside the condition when the
/// marginals do not allow that margin).
fn admissible_start(p: &WvagParams<f64>, c: f64, cfg: &MleConfig) -> Result<WvagParams<f64>> {
    let mut a = p.a().min(0.95 * p.a_upper_bound());
    if !cfg.override_invertibility {
        let comfortable = a_bound_for_margin(p, c, START_MARGIN);
        if comfortable > 0.0 {
            a = a.min(comfortable);
        } else {
            let bound = a_bound_for_margin(p, c, 0.5);
            if bound <= 0.0 {
                return Err(Error::NotInvertible { t: c, margin: fourier_invertible(p, c).margin });
            }
            a = a.min(0.9 * bound);
        }
    }
    let mut v = p.to_vector();
    v[0] = a;
    // a boundary correlation leaves no density to invert
    let cap = 0.99 * (v[5] * v[6]).sqrt();
    v[7] = v[7].clamp(-cap, cap);
    WvagParams::from_vector(&v)
}

struct Objective<'a> {
    sample: &'a ReturnSample,
    cfg: &'a MleConfig,
    n: usize,
}

impl Objective<'_> {
    fn neg_ll(&self, p: &WvagParams<f64>) -> f64 {
        if !self.cfg.override_invertibility && !fourier_invertible(p, self.sample.c).invertible {
            return f64::INFINITY;
        }
        match log_likelihood_at(p, self.sample, self.n, self.cfg) {
            Ok(l) => -l,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Nelder-Mead within a total budget of `cfg.max_evals`, restarting from
/// the incumbent while it keeps improving.
fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NmOptions) -> NmResult {
    let mut budget = opts.max_evals;
    let mut best = nelder_mead(&mut f, x0, &NmOptions { max_evals: budget, ..*opts });
    budget = budget.saturating_sub(best.evals);
    while budget > 4 * (x0.len() + 1) {
        let r = nelder_mead(&mut f, &best.x, &NmOptions { max_evals: budget, ..*opts });
        budget = budget.saturating_sub(r.evals);
        let gain = best.f - r.f;
        let evals = best.evals + r.evals;
        let mut trace = std::mem::take(&mut best.trace);
        trace.extend(&r.trace);
        if r.f < best.f {
            best = r;
        }
        best.evals = evals;
        best.trace = trace;
        if !(gain > opts.ftol * (best.f.abs() + opts.ftol)) {
            break;
        }
    }
    best
}

/// Full-parameter MLE from a given starting point (the last stage alone).
pub fn fit_mle_from(sample: &ReturnSample, cons: Constraints, start: &WvagParams<f64>, cfg: &MleConfig) -> Result<MleFit> {
    let start = admissible_start(&cons.apply(start)?, sample.c, cfg)?;
    let n = choose_resolution(&start, sample, cfg)?;
    let obj = Objective { sample, cfg, n };
    let l0 = -obj.neg_ll(&start);
    let r = Reparam::all(start.clone(), cons.sigma12_zero, cons.mu_zero);
    let res = minimize(|x| r.decode(x).map(|p| obj.neg_ll(&p)).unwrap_or(f64::INFINITY), &r.encode(&start), &cfg.nm);
    let (params, ll) = if -res.f > l0 { (r.decode(&res.x)?, -res.f) } else { (start, l0) };
    if !ll.is_finite() {
        return Err(Error::OptimizerFailed("no finite likelihood at the starting point".into()));
    }
    Ok(MleFit {
        overridden: !fourier_invertible(&params, sample.c).invertible,
        params,
        log_likelihood: ll,
        stage_log_likelihoods: vec![l0, ll],
        resolution: n,
        evals: res.evals,
        converged: res.converged,
    })
}

/// Staged MLE: method-of-moments start, per-marginal fits, dependence
/// parameters with the marginals fixed, then all parameters.
pub fn fit_mle(sample: &ReturnSample, cons: Constraints, cfg: &MleConfig) -> Result<MleFit> {
    if sample.len() < 10 {
        return Err(Error::InvalidInput(format!("maximum likelihood needs N >= 10, got {}", sample.len())));
    }
    let c = sample.c;
    if cfg.override_invertibility {
        log::warn!("likelihood fit at c = {c} may use densities outside the integrability condition");
    }
    let mom = fit_mom(sample, cons, &MomConfig::default())?.params;
    let stage0 = admissible_start(&mom, c, cfg)?;
    if !cfg.staged {
        return fit_mle_from(sample, cons, &stage0, cfg);
    }
    let mut evals = 0;
    let mut converged = true;

    // Stage 1: each marginal by itself, with the closed-form density.
    let mut stage1 = stage0.clone();
    for k in 0..2 {
        let data = sample.component(k);
        let mut free = vec![Free::Alpha(k), Free::SigmaDiag(k), Free::M(k)];
        if !cons.mu_zero {
            free.push(Free::Mu(k));
        }
        // a is irrelevant for a marginal; keep it tiny so alpha can move freely
        let mut v = stage1.to_vector();
        v[0] = 1e-6 * stage1.a_upper_bound();
        v[7] = 0.0;
        let base = WvagParams::from_vector(&v)?;
        let r = Reparam::new(base.clone(), free);
        let f = |x: &[f64]| {
            r.decode(x)
                .and_then(|p| marginal_log_likelihood(&p, k, &data, c))
                .map(|l| -l)
                .unwrap_or(f64::INFINITY)
        };
        let res = minimize(f, &r.encode(&base), &cfg.nm);
        evals += res.evals;
        converged &= res.converged;
        let fitted = r.decode(&res.x)?;
        let mut w = stage1.to_vector();
        w[1 + k] = fitted.alpha()[k];
        w[3 + k] = fitted.mu()[k];
        w[5 + k] = fitted.sigma().get(k, k);
        w[8 + k] = fitted.m()[k];
        // keep the correlation implied by the starting values
        let rho = stage1.rho();
        let mut cand = w;
        cand[0] = w[0].min(0.95 / w[1].max(w[2]));
        cand[7] = rho * (w[5] * w[6]).sqrt();
        stage1 = WvagParams::from_vector(&cand)?;
    }
    let stage1 = admissible_start(&stage1, c, cfg)?;

    let n = choose_resolution(&stage1, sample, cfg)?;
    let obj = Objective { sample, cfg, n };
    let l0 = -obj.neg_ll(&stage0);
    let l1_raw = -obj.neg_ll(&stage1);
    let (stage1, l1) = if l1_raw >= l0 { (stage1, l1_raw) } else { (stage0.clone(), l0) };

    // Stage 2: (a, rho) with marginals fixed; coarse scan, then simplex.
    let free2 = if cons.sigma12_zero { vec![Free::A] } else { vec![Free::A, Free::Rho] };
    let r2 = Reparam::new(stage1.clone(), free2);
    let f2 = |x: &[f64]| r2.decode(x).map(|p| obj.neg_ll(&p)).unwrap_or(f64::INFINITY);
    let mut x2 = r2.encode(&stage1);
    let mut best2 = f2(&x2);
    let rhos: &[f64] = if cons.sigma12_zero { &[0.0] } else { &[-0.6, -0.2, 0.2, 0.6] };
    for i in 1..6 {
        for &rho in rhos {
            let mut x = vec![((i as f64 / 6.0) / (1.0 - i as f64 / 6.0)).ln()];
            if !cons.sigma12_zero {
                x.push(f64::atanh(rho));
            }
            let v = f2(&x);
            evals += 1;
            if v < best2 {
                best2 = v;
                x2 = x;
            }
        }
    }
    let res2 = minimize(f2, &x2, &cfg.nm);
    evals += res2.evals;
    converged &= res2.converged;
    let (stage2, l2) = if -res2.f >= l1 { (r2.decode(&res2.x)?, -res2.f) } else { (stage1, l1) };

    // Outside the integrability condition the grid likelihood does not
    // settle under refinement, and a free search exploits inversion ripple;
    // the marginals keep their closed-form fits.
    if !fourier_invertible(&stage2, c).invertible && l2.is_finite() {
        return Ok(MleFit {
            overridden: true,
            params: cons.apply(&stage2)?,
            log_likelihood: l2,
            stage_log_likelihoods: vec![l0, l1, l2],
            resolution: n,
            evals,
            converged,
        });
    }

    // Stage 3: everything.
    let r3 = Reparam::all(stage2.clone(), cons.sigma12_zero, cons.mu_zero);
    let f3 = |x: &[f64]| r3.decode(x).map(|p| obj.neg_ll(&p)).unwrap_or(f64::INFINITY);
    let res3 = minimize(f3, &r3.encode(&stage2), &cfg.nm);
    evals += res3.evals;
    converged &= res3.converged;
    let (params, l3) = if -res3.f >= l2 { (r3.decode(&res3.x)?, -res3.f) } else { (stage2, l2) };
    let params = cons.apply(&params)?;
    if !l3.is_finite() {
        return Err(Error::OptimizerFailed("likelihood is not finite at any stage".into()));
    }
    Ok(MleFit {
        overridden: !fourier_invertible(&params, c).invertible,
        params,
        log_likelihood: l3,
        stage_log_likelihoods: vec![l0, l1, l2, l3],
        resolution: n,
        evals,
        converged,
    })
}
