//! Derivative-free minimization and the unconstrained parametrization used
//! by the calibrators.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{SymMatrix, WvagParams};

/// Stopping rules for [`nelder_mead`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Stop when `f_worst - f_best <= ftol * (|f_best| + ftol)`.
    pub ftol: f64,
    /// Stop when the simplex diameter (max-norm) falls below `xtol`.
    pub xtol: f64,
    /// Edge length of the initial simplex.
    pub step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions { max_evals: 2000, ftol: 1e-8, xtol: 1e-8, step: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
    /// Best objective after each iteration.
    pub trace: Vec<f64>,
}

/// Nelder-Mead with dimension-adaptive coefficients. Non-finite objective
/// values are treated as `+inf`, which makes infeasible points repellent.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NmOptions) -> NmResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return NmResult { x: vec![], f: v, evals, converged: true, trace: vec![v] };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut trace = Vec::new();
    let mut converged = false;

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(simplex[0].1);
        let (fb, fw) = (simplex[0].1, simplex[n].1);
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let flat = fb.is_finite() && fw - fb <= opts.ftol * (fb.abs() + opts.ftol);
        if diameter < opts.xtol || flat {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let worst = simplex[n].0.clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        if fr < simplex[n].1 {
            let xc = along(alpha * rho);
            let fc = eval(&xc, &mut evals);
            if fc <= fr {
                simplex[n] = (xc, fc);
                continue;
            }
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            if fc < simplex[n].1 {
                simplex[n] = (xc, fc);
                continue;
            }
        }
        let best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best.iter().zip(&item.0).map(|(b, x)| b + sigma * (x - b)).collect();
            let v = eval(&x, &mut evals);
            *item = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NmResult { x, f, evals, converged, trace }
}

/// Runs [`nelder_mead`] from `x0`, then restarts from the incumbent until a
/// restart no longer improves it (at most `restarts` times).
pub fn nelder_mead_restarts<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NmOptions, restarts: usize) -> NmResult {
    let mut best = nelder_mead(&mut f, x0, opts);
    for _ in 0..restarts {
        let r = nelder_mead(&mut f, &best.x, opts);
        let improved = r.f < best.f - opts.ftol * (best.f.abs() + opts.ftol);
        let evals = best.evals + r.evals;
        let mut trace = std::mem::take(&mut best.trace);
        trace.extend(&r.trace);
        if r.f < best.f {
            best = r;
        }
        best.evals = evals;
        best.trace = trace;
        if !improved {
            break;
        }
    }
    best
}

/// Parameters that can be released to the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Free {
    A,
    Alpha(usize),
    Mu(usize),
    SigmaDiag(usize),
    Rho,
    M(usize),
}

/// Bijection between a subset of the bivariate parameters and `R^d`:
/// logs for `alpha` and the variances, `a = sigmoid(u) / max(alpha)`,
/// `rho = tanh(z)`, identity for drifts. Parameters not released keep their
/// values from `base`.
#[derive(Clone, Debug)]
pub struct Reparam {
    base: WvagParams<f64>,
    free: Vec<Free>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    (p / (1.0 - p)).ln()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl Reparam {
    pub fn new(base: WvagParams<f64>, free: Vec<Free>) -> Self {
        assert_eq!(base.dim(), 2, "calibration is bivariate");
        Reparam { base, free }
    }

    /// Every parameter free except those excluded by the model constraints.
    pub fn all(base: WvagParams<f64>, sigma12_zero: bool, mu_zero: bool) -> Self {
        let mut free = vec![Free::A, Free::Alpha(0), Free::Alpha(1)];
        if !mu_zero {
            free.extend([Free::Mu(0), Free::Mu(1)]);
        }
        free.extend([Free::SigmaDiag(0), Free::SigmaDiag(1)]);
        if !sigma12_zero {
            free.push(Free::Rho);
        }
        free.extend([Free::M(0), Free::M(1)]);
        Reparam::new(base, free)
    }

    pub fn free(&self) -> &[Free] {
        &self.free
    }

    pub fn base(&self) -> &WvagParams<f64> {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn encode(&self, p: &WvagParams<f64>) -> Vec<f64> {
        let max_alpha = p.alpha()[0].max(p.alpha()[1]);
        self.free
            .iter()
            .map(|f| match *f {
                Free::A => logit(p.a() * max_alpha),
                Free::Alpha(k) => p.alpha()[k].ln(),
                Free::Mu(k) => p.mu()[k],
                Free::SigmaDiag(k) => p.sigma().get(k, k).ln(),
                Free::Rho => p.rho().clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh(),
                Free::M(k) => p.m()[k],
            })
            .collect()
    }

    pub fn decode(&self, x: &[f64]) -> Result<WvagParams<f64>> {
        let b = &self.base;
        let mut alpha = [b.alpha()[0], b.alpha()[1]];
        let mut mu = [b.mu()[0], b.mu()[1]];
        let mut s = [b.sigma().get(0, 0), b.sigma().get(1, 1)];
        let mut rho = b.rho();
        let mut m = [b.m()[0], b.m()[1]];
        let mut a_code = None;
        for (f, &v) in self.free.iter().zip(x) {
            match *f {
                Free::A => a_code = Some(v),
                Free::Alpha(k) => alpha[k] = v.exp(),
                Free::Mu(k) => mu[k] = v,
                Free::SigmaDiag(k) => s[k] = v.exp(),
                Free::Rho => rho = v.tanh(),
                Free::M(k) => m[k] = v,
            }
        }
        let a = match a_code {
            Some(u) => sigmoid(u) / alpha[0].max(alpha[1]),
            None => b.a(),
        };
        let s12 = if rho == 0.0 { 0.0 } else { rho * (s[0] * s[1]).sqrt() };
        WvagParams::new(a, alpha.to_vec(), mu.to_vec(), SymMatrix::bivariate(s[0], s12, s[1]), m.to_vec())
    }
}
