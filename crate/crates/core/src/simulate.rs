//! Exact simulation of gamma, VG and WVAG increments.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SymMatrix, VgParams, WvagParams};

/// Reproducible random stream identified by `(seed, stream)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    /// Child stream `k`; children of distinct parents or indices differ.
    pub fn substream(&self, k: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(k.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

/// Standard gamma variate with unit rate (Marsaglia-Tsang; shapes below one
/// use the `G(shape + 1) U^(1/shape)` boost).
pub fn standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let g = standard_gamma(shape + 1.0, rng);
        let u: f64 = rng.gen();
        return g * (u.ln() / shape).exp();
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.gen();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// `Gamma(shape, rate)` variate.
pub fn gamma_increment<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    standard_gamma(shape, rng) / rate
}

/// Matrix `L` with `L L' = sigma`: Cholesky, or an eigenvalue square root
/// when the matrix is only semidefinite.
pub fn psd_factor(sigma: &SymMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.dim();
    let m = DMatrix::from_fn(n, n, |i, j| sigma.get(i, j));
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
        return Err(Error::Infeasible("covariance matrix is not positive semidefinite".into()));
    }
    let mut l = eig.eigenvectors.clone();
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

/// One draw of `V(t)` for `V ~ VG^n(b, mu, sigma)` using a single stream.
pub fn vg_increment<R: Rng + ?Sized>(p: &VgParams<f64>, t: f64, rng: &mut R) -> Result<Vec<f64>> {
    let l = psd_factor(&p.sigma)?;
    let g = gamma_increment(p.b * t, p.b, rng);
    let z: Vec<f64> = (0..p.dim()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(brownian_at(&p.mu, &l, g, &z))
}

fn brownian_at(mu: &[f64], l: &DMatrix<f64>, g: f64, z: &[f64]) -> Vec<f64> {
    let sg = g.sqrt();
    (0..mu.len())
        .map(|i| mu[i] * g + sg * (0..z.len()).map(|j| l[(i, j)] * z[j]).sum::<f64>())
        .collect()
}

/// Independent generators for the normal draws and for each gamma clock, so
/// that nearby parameter values reuse the same random numbers.
pub struct SimRng {
    normal: ChaCha8Rng,
    gammas: Vec<ChaCha8Rng>,
}

impl SimRng {
    pub fn new(stream: RngStream, n_clocks: usize) -> Self {
        SimRng {
            normal: stream.substream(0).rng(),
            gammas: (0..n_clocks).map(|k| stream.substream(k as u64 + 1).rng()).collect(),
        }
    }
}

/// Sampler for increments `Y(t) = m t + V_0(t) + sum_k V_k(t) e_k`.
#[derive(Clone, Debug)]
pub struct WvagSampler {
    t: f64,
    n: usize,
    drift: Vec<f64>,
    common_b: f64,
    common_mu: Vec<f64>,
    common_l: DMatrix<f64>,
    idio: Vec<(f64, f64, f64)>,
}

impl WvagSampler {
    pub fn new(p: &WvagParams<f64>, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("time must be positive, got {t}")));
        }
        let d = p.decompose();
        Ok(WvagSampler {
            t,
            n: p.dim(),
            drift: p.m().iter().map(|&m| m * t).collect(),
            common_b: d.common.b,
            common_mu: d.common.mu.clone(),
            common_l: psd_factor(&d.common.sigma)?,
            idio: d
                .idiosyncratic
                .iter()
                .map(|v| (v.b, v.mu[0], v.sigma.get(0, 0).sqrt()))
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Writes one increment into `out`.
    pub fn draw_into(&self, rng: &mut SimRng, out: &mut [f64]) {
        let g0 = gamma_increment(self.common_b * self.t, self.common_b, &mut rng.gammas[0]);
        let mut z = [0.0f64; 8];
        let z: &mut [f64] = if self.n <= 8 { &mut z[..self.n] } else { unreachable!("dimension above 8") };
        for zi in z.iter_mut() {
            *zi = rng.normal.sample(StandardNormal);
        }
        let sg0 = g0.sqrt();
        for i in 0..self.n {
            let mut w = 0.0;
            for (j, zj) in z.iter().enumerate() {
                w += self.common_l[(i, j)] * zj;
            }
            let (b, mu, sd) = self.idio[i];
            let gk = gamma_increment(b * self.t, b, &mut rng.gammas[i + 1]);
            let zk: f64 = rng.normal.sample(StandardNormal);
            out[i] = self.drift[i] + self.common_mu[i] * g0 + sg0 * w + mu * gk + sd * gk.sqrt() * zk;
        }
    }

    pub fn draw2(&self, rng: &mut SimRng) -> [f64; 2] {
        let mut y = [0.0; 2];
        self.draw_into(rng, &mut y);
        y
    }

    pub fn sample(&self, n_obs: usize, stream: RngStream) -> Vec<[f64; 2]> {
        assert_eq!(self.n, 2, "bivariate sampler");
        let mut rng = SimRng::new(stream, 3);
        (0..n_obs).map(|_| self.draw2(&mut rng)).collect()
    }
}

/// One increment of `Y(t)` using a fresh [`SimRng`] from `stream`.
pub fn wvag_increment(p: &WvagParams<f64>, t: f64, stream: RngStream) -> Result<Vec<f64>> {
    let s = WvagSampler::new(p, t)?;
    let mut rng = SimRng::new(stream, p.dim() + 1);
    let mut out = vec![0.0; p.dim()];
    s.draw_into(&mut rng, &mut out);
    Ok(out)
}

/// `N` iid bivariate log returns observed at interval `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnSample {
    pub c: f64,
    pub obs: Vec<[f64; 2]>,
}

impl ReturnSample {
    pub fn new(c: f64, obs: Vec<[f64; 2]>) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("sampling interval must be positive, got {c}")));
        }
        if obs.is_empty() {
            return Err(Error::InvalidInput("sample is empty".into()));
        }
        if obs.iter().any(|y| !y[0].is_finite() || !y[1].is_finite()) {
            return Err(Error::InvalidInput("sample has non-finite entries".into()));
        }
        Ok(ReturnSample { c, obs })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.obs.iter().map(|y| y[k]).collect()
    }
}

/// `N` increments of `Y` at interval `c`.
pub fn simulate_sample(p: &WvagParams<f64>, c: f64, n_obs: usize, stream: RngStream) -> Result<ReturnSample> {
    if n_obs == 0 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    let s = WvagSampler::new(p, c)?;
    ReturnSample::new(c, s.sample(n_obs, stream))
}

/// `reps` independent samples; replication `r` uses substream `r` of `root`.
pub fn simulate_study(p: &WvagParams<f64>, c: f64, n_obs: usize, reps: usize, root: RngStream) -> Result<Vec<ReturnSample>> {
    (0..reps).map(|r| simulate_sample(p, c, n_obs, root.substream(r as u64))).collect()
}
