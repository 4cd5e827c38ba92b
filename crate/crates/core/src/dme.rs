//! Digital moment estimation: marginals by matching quantile probabilities,
//! then `(a, rho)` by a simulated orthant-probability grid search smoothed
//! with LOESS.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::marginal_law;
use crate::io::write_atomic;
use crate::loess::{loess, LoessConfig};
use crate::model::{Constraints, WvagParams};
use crate::moments::{fit_mom, MomConfig};
use crate::optim::{nelder_mead, Free, NmOptions, Reparam};
use crate::par::map_indexed;
use crate::simulate::{ReturnSample, RngStream, SimRng, WvagSampler};

/// Probability levels at which quantiles are matched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileSpec {
    levels: Vec<f64>,
}

impl QuantileSpec {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidInput("quantile levels are empty".into()));
        }
        if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::InvalidInput("quantile levels must lie in (0, 1)".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("quantile levels must be strictly increasing".into()));
        }
        Ok(QuantileSpec { levels })
    }

    /// `n` equally spaced levels from `lo` to `hi` inclusive.
    pub fn equally_spaced(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 1 {
            return QuantileSpec::new(vec![lo]);
        }
        QuantileSpec::new((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    }

    /// 10 levels from 0.05 to 0.95 (the default).
    pub fn q1() -> Self {
        QuantileSpec::equally_spaced(10, 0.05, 0.95).unwrap()
    }

    /// 10 levels from 0.01 to 0.99.
    pub fn q2() -> Self {
        QuantileSpec::equally_spaced(10, 0.01, 0.99).unwrap()
    }

    /// 10 levels from 0.1 to 0.9.
    pub fn q3() -> Self {
        QuantileSpec::equally_spaced(10, 0.1, 0.9).unwrap()
    }

    /// 20 levels from 0.05 to 0.95.
    pub fn q4() -> Self {
        QuantileSpec::equally_spaced(20, 0.05, 0.95).unwrap()
    }

    /// Preset by name (`q1` to `q4`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "q1" => Ok(Self::q1()),
            "q2" => Ok(Self::q2()),
            "q3" => Ok(Self::q3()),
            "q4" => Ok(Self::q4()),
            _ => Err(Error::InvalidInput(format!("unknown quantile preset '{name}'"))),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl Default for QuantileSpec {
    fn default() -> Self {
        Self::q1()
    }
}

impl TryFrom<Vec<f64>> for QuantileSpec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        QuantileSpec::new(v)
    }
}

impl From<QuantileSpec> for Vec<f64> {
    fn from(q: QuantileSpec) -> Self {
        q.levels
    }
}

/// Sample quantiles with linear interpolation between the closest order
/// statistics (`h = (N - 1) q`).
pub fn empirical_quantiles(data: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot take quantiles of empty data".into()));
    }
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    Ok(q.iter()
        .map(|&p| {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            x[lo] + (h - lo as f64) * (x[hi] - x[lo])
        })
        .collect())
}

/// `P(Y1 <= l1[i], Y2 <= l2[j])` estimated from `points`, row-major in `i`.
/// Both lattices must be non-decreasing.
pub fn orthant_probabilities<I: IntoIterator<Item = [f64; 2]>>(points: I, l1: &[f64], l2: &[f64]) -> Vec<f64> {
    let (n1, n2) = (l1.len(), l2.len());
    let mut hist = vec![0u64; (n1 + 1) * (n2 + 1)];
    let mut total = 0u64;
    for y in points {
        let r1 = l1.partition_point(|&v| v < y[0]);
        let r2 = l2.partition_point(|&v| v < y[1]);
        hist[r1 * (n2 + 1) + r2] += 1;
        total += 1;
    }
    // a point in bin (r1, r2) lies below every lattice node (i, j) with i >= r1, j >= r2
    let mut cum = vec![0u64; n1 * n2];
    for i in 0..n1 {
        let mut row = 0u64;
        for j in 0..n2 {
            row += hist[i * (n2 + 1) + j];
            cum[i * n2 + j] = row + if i > 0 { cum[(i - 1) * n2 + j] } else { 0 };
        }
    }
    let denom = total.max(1) as f64;
    cum.into_iter().map(|c| c as f64 / denom).collect()
}

/// Settings for both DME stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmeConfig {
    pub quantiles: QuantileSpec,
    pub loess: LoessConfig,
    /// Simulations per grid node.
    pub simulations: usize,
    /// Nodes per axis of the `(a, rho)` grid; the one-dimensional VAG grid
    /// uses the square of this.
    pub grid: usize,
    pub nm: NmOptions,
    /// Polish the grid arg-min with a simplex search on the raw simulated
    /// error.
    pub refine: bool,
    /// Worker threads for the grid; 0 means the available parallelism.
    pub threads: usize,
}

impl Default for DmeConfig {
    fn default() -> Self {
        DmeConfig {
            quantiles: QuantileSpec::q1(),
            loess: LoessConfig::default(),
            simulations: 10_000,
            grid: 10,
            nm: NmOptions { max_evals: 2000, ftol: 1e-10, xtol: 1e-8, step: 0.1 },
            refine: false,
            threads: 0,
        }
    }
}

/// Result of the marginal stage for one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDme {
    pub alpha: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub m: f64,
    pub objective: f64,
    pub initial_objective: f64,
    /// Best objective after each simplex iteration.
    pub trace: Vec<f64>,
}

/// Squared quantile-probability error of coordinate `k` of `p`.
pub fn marginal_objective(p: &WvagParams<f64>, k: usize, c: f64, quantiles: &[f64], levels: &[f64]) -> Result<f64> {
    let law = marginal_law(p, k, c)?;
    let mut sum = 0.0;
    for (y, q) in quantiles.iter().zip(levels) {
        let d = law.cdf(*y) - q;
        sum += d * d;
    }
    if sum.is_finite() {
        Ok(sum)
    } else {
        Err(Error::Quadrature("marginal distribution function is not finite".into()))
    }
}

fn marginal_base(init: &WvagParams<f64>) -> Result<WvagParams<f64>> {
    // a does not enter a marginal law; keep it tiny so alpha can move freely
    let mut v = init.to_vector();
    v[0] = 1e-6 * init.a_upper_bound();
    v[7] = 0.0;
    WvagParams::from_vector(&v)
}

/// Marginal DME for coordinate `k` over the parameters in `free` (all of
/// which must refer to `k`), starting from `init`.
pub fn fit_dme_marginal_free(
    data: &[f64],
    k: usize,
    c: f64,
    q: &QuantileSpec,
    init: &WvagParams<f64>,
    free: Vec<Free>,
    nm: &NmOptions,
) -> Result<MarginalDme> {
    if data.len() < 10.max(q.len()) {
        return Err(Error::InvalidInput(format!("marginal DME needs N >= 10, got {}", data.len())));
    }
    let yq = empirical_quantiles(data, q.levels())?;
    let base = marginal_base(init)?;
    let r = Reparam::new(base.clone(), free);
    let f = |x: &[f64]| {
        r.decode(x)
            .and_then(|p| marginal_objective(&p, k, c, &yq, q.levels()))
            .unwrap_or(f64::INFINITY)
    };
    let x0 = r.encode(&base);
    let f0 = f(&x0);
    let res = nelder_mead(f, &x0, nm);
    if !res.f.is_finite() {
        return Err(Error::OptimizerFailed(format!("marginal {} DME objective is not finite", k + 1)));
    }
    let (p, obj) = if res.f <= f0 { (r.decode(&res.x)?, res.f) } else { (base, f0) };
    Ok(MarginalDme {
        alpha: p.alpha()[k],
        mu: p.mu()[k],
        sigma2: p.sigma().get(k, k),
        m: p.m()[k],
        objective: obj,
        initial_objective: f0,
        trace: res.trace,
    })
}

/// Marginal DME for coordinate `k` over `(alpha, mu, Sigma_kk, m)`.
pub fn fit_dme_marginal(
    data: &[f64],
    k: usize,
    c: f64,
    q: &QuantileSpec,
    init: &WvagParams<f64>,
    cons: Constraints,
    nm: &NmOptions,
) -> Result<MarginalDme> {
    let mut free = vec![Free::Alpha(k), Free::SigmaDiag(k), Free::M(k)];
    if !cons.mu_zero {
        free.push(Free::Mu(k));
    }
    fit_dme_marginal_free(data, k, c, q, init, free, nm)
}

/// One node of the joint error surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub a: f64,
    pub rho: f64,
    pub raw: f64,
    pub smoothed: f64,
}

/// Joint-stage output.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDme {
    pub a: f64,
    pub rho: f64,
    pub surface: Vec<SurfacePoint>,
    /// Index of the selected node in `surface`.
    pub best: usize,
    pub refined: bool,
}

/// Simulated orthant probabilities of `p` at the lattice, using the common
/// random numbers of `stream`.
pub fn simulated_orthant_probabilities(
    p: &WvagParams<f64>,
    c: f64,
    l1: &[f64],
    l2: &[f64],
    n_sims: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let s = WvagSampler::new(p, c)?;
    let mut rng = SimRng::new(stream, 3);
    Ok(orthant_probabilities((0..n_sims).map(|_| s.draw2(&mut rng)), l1, l2))
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn with_dependence(marg: &WvagParams<f64>, a: f64, rho: f64) -> Result<WvagParams<f64>> {
    let mut v = marg.to_vector();
    v[0] = a;
    v[7] = if rho == 0.0 { 0.0 } else { rho * (v[5] * v[6]).sqrt() };
    WvagParams::from_vector(&v)
}

fn grid_nodes(a_max: f64, grid: usize, sigma12_zero: bool) -> Vec<(f64, f64)> {
    if sigma12_zero {
        let n = grid * grid;
        return (0..n).map(|i| ((i as f64 + 0.5) / n as f64 * a_max, 0.0)).collect();
    }
    let mut out = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let a = (i as f64 + 0.5) / grid as f64 * a_max;
            let rho = -1.0 + (j as f64 + 0.5) * 2.0 / grid as f64;
            out.push((a, rho));
        }
    }
    out
}

/// Joint DME of `(a, rho)` with the marginal parameters of `marginals`
/// held fixed. Every grid node reuses the random numbers of `stream`.
pub fn fit_dme_joint(
    sample: &ReturnSample,
    marginals: &WvagParams<f64>,
    cons: Constraints,
    cfg: &DmeConfig,
    stream: RngStream,
) -> Result<JointDme> {
    cfg.loess.validate()?;
    if cfg.grid == 0 || cfg.simulations == 0 {
        return Err(Error::InvalidInput("DME grid and simulation counts must be positive".into()));
    }
    let c = sample.c;
    let a_max = 1.0 / marginals.alpha()[0].max(marginals.alpha()[1]);
    if !(a_max.is_finite() && a_max > 0.0) {
        return Err(Error::DegenerateGrid(format!("feasible interval for a is empty (upper bound {a_max})")));
    }
    let levels = cfg.quantiles.levels();
    let l1 = empirical_quantiles(&sample.component(0), levels)?;
    let l2 = empirical_quantiles(&sample.component(1), levels)?;
    let target = orthant_probabilities(sample.obs.iter().copied(), &l1, &l2);

    let nodes = grid_nodes(a_max, cfg.grid, cons.sigma12_zero);
    let eval = |&(a, rho): &(f64, f64)| -> Result<f64> {
        let p = with_dependence(marginals, a, rho)?;
        let probs = simulated_orthant_probabilities(&p, c, &l1, &l2, cfg.simulations, stream)?;
        Ok(squared_error(&probs, &target))
    };
    let raw: Vec<f64> = map_indexed(nodes.len(), cfg.threads, |i| eval(&nodes[i])).into_iter().collect::<Result<_>>()?;

    let coords: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&(a, rho)| if cons.sigma12_zero { vec![a / a_max] } else { vec![a / a_max, 0.5 * (rho + 1.0)] })
        .collect();
    let smoothed = loess(&coords, &raw, &cfg.loess)?;
    let best = smoothed
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::DegenerateGrid("empty grid".into()))?;
    let surface: Vec<SurfacePoint> = nodes
        .iter()
        .zip(raw.iter().zip(&smoothed))
        .map(|(&(a, rho), (&raw, &smoothed))| SurfacePoint { a, rho, raw, smoothed })
        .collect();
    let (mut a, mut rho) = nodes[best];
    let mut refined = false;
    if cfg.refine {
        let start = with_dependence(marginals, a, rho)?;
        let free = if cons.sigma12_zero { vec![Free::A] } else { vec![Free::A, Free::Rho] };
        let r = Reparam::new(start.clone(), free);
        let f = |x: &[f64]| {
            r.decode(x)
                .and_then(|p| {
                    let probs = simulated_orthant_probabilities(&p, c, &l1, &l2, cfg.simulations, stream)?;
                    Ok(squared_error(&probs, &target))
                })
                .unwrap_or(f64::INFINITY)
        };
        let x0 = r.encode(&start);
        let f0 = f(&x0);
        let res = nelder_mead(f, &x0, &NmOptions { step: 0.2, ..cfg.nm });
        if res.f < f0 {
            let p = r.decode(&res.x)?;
            a = p.a();
            rho = p.rho();
            refined = true;
        }
    }
    Ok(JointDme { a, rho, surface, best, refined })
}

/// Writes the error surface as `a,rho,raw,smoothed`.
pub fn write_surface_csv<W: Write>(surface: &[SurfacePoint], mut w: W) -> Result<()> {
    writeln!(w, "a,rho,raw,smoothed")?;
    for s in surface {
        writeln!(w, "{:e},{:e},{:e},{:e}", s.a, s.rho, s.raw, s.smoothed)?;
    }
    Ok(())
}

pub fn save_surface_csv(surface: &[SurfacePoint], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_surface_csv(surface, &mut buf)?;
    write_atomic(path, &buf)
}

/// Complete DME fit.
#[derive(Clone, Debug, PartialEq)]
pub struct DmeFit {
    pub params: WvagParams<f64>,
    pub marginals: [MarginalDme; 2],
    pub joint: JointDme,
}

/// Method-of-moments initials, marginal DME for each coordinate, then the
/// joint grid search.
pub fn fit_dme(sample: &ReturnSample, cons: Constraints, cfg: &DmeConfig, stream: RngStream) -> Result<DmeFit> {
    if sample.len() < 10 {
        return Err(Error::InvalidInput(format!("DME needs N >= 10, got {}", sample.len())));
    }
    let init = fit_mom(sample, cons, &MomConfig::default())?.params;
    let c = sample.c;
    let m0 = fit_dme_marginal(&sample.component(0), 0, c, &cfg.quantiles, &init, cons, &cfg.nm)?;
    let m1 = fit_dme_marginal(&sample.component(1), 1, c, &cfg.quantiles, &init, cons, &cfg.nm)?;
    let a_max = 1.0 / m0.alpha.max(m1.alpha);
    let marg = WvagParams::bivariate(
        0.5 * a_max,
        [m0.alpha, m1.alpha],
        [m0.mu, m1.mu],
        [[m0.sigma2, 0.0], [0.0, m1.sigma2]],
        [m0.m, m1.m],
    )?;
    let joint = fit_dme_joint(sample, &marg, cons, cfg, stream)?;
    let params = cons.apply(&with_dependence(&marg, joint.a, joint.rho)?)?;
    Ok(DmeFit { params, marginals: [m0, m1], joint })
}
