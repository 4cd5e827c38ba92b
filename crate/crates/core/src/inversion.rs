//! Densities of `Y(t)` by discrete Fourier inversion of the characteristic
//! function, plus the marginal and conditional distribution functions built
//! on top of them.

use std::cell::RefCell;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::charfn::{char_fn, fourier_invertible};
use crate::error::{Error, Result};
use crate::model::WvagParams;
use crate::special::VgMarginal;

/// Density floor applied before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Allowed deviation of the grid integral from one.
pub const NORMALIZATION_TOL: f64 = 1e-3;
/// Tail mass below which the normalization check is enforced.
pub const TAIL_MASS_GATE: f64 = 1e-4;

/// Axis-aligned evaluation box and per-axis node count (a power of two).
/// Nodes sit at `lo + i (hi - lo) / (n - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: [usize; 2],
}

impl GridSpec {
    pub fn new(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        for k in 0..2 {
            if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
                return Err(Error::InvalidInput(format!("empty grid box on axis {k}: [{}, {}]", lo[k], hi[k])));
            }
            if n[k] < 8 || !n[k].is_power_of_two() {
                return Err(Error::InvalidInput(format!("grid resolution {} is not a power of two >= 8", n[k])));
            }
        }
        Ok(GridSpec { lo, hi, n })
    }

    pub fn square(lo: [f64; 2], hi: [f64; 2], n: usize) -> Result<Self> {
        GridSpec::new(lo, hi, [n, n])
    }

    #[inline]
    pub fn step(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.n[k] - 1) as f64
    }

    #[inline]
    pub fn node(&self, k: usize, i: usize) -> f64 {
        self.lo[k] + i as f64 * self.step(k)
    }

    /// Nyquist frequency `pi / dy` of axis `k`.
    pub fn theta_max(&self, k: usize) -> f64 {
        std::f64::consts::PI / self.step(k)
    }

    /// Box covering the sample extremes widened by `margin_sd` marginal
    /// standard deviations of `Y(t)` on each side.
    pub fn around_sample(p: &WvagParams<f64>, t: f64, obs: &[[f64; 2]], margin_sd: f64, n: usize) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for y in obs {
            for k in 0..2 {
                lo[k] = lo[k].min(y[k]);
                hi[k] = hi[k].max(y[k]);
            }
        }
        for k in 0..2 {
            let law = marginal_law(p, k, t)?;
            let (mean, sd) = (law.mean(), law.variance().sqrt());
            lo[k] = lo[k].min(mean) - margin_sd * sd;
            hi[k] = hi[k].max(mean) + margin_sd * sd;
        }
        GridSpec::square(lo, hi, n)
    }
}

/// Options for [`joint_density`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InversionOptions {
    /// Invert even when the integrability condition fails.
    pub override_invertibility: bool,
}

/// Tabulated joint density of `Y(t)` with its diagnostics. Values are stored
/// row-major with `y1` as the row index.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub t: f64,
    pub spec: GridSpec,
    values: Vec<f64>,
    /// Per-axis frequency truncation.
    pub theta_max: [f64; 2],
    /// Largest `|Phi|` on the boundary of the frequency box (axes and diagonals).
    pub truncation_level: f64,
    /// Mass of the marginals outside the box, from the exact marginal laws.
    pub tail_mass_bound: f64,
    /// Mass of the negative values removed by clipping.
    pub clipped_mass: f64,
    /// Most negative raw value before clipping.
    pub min_raw: f64,
    /// Trapezoid integral of the clipped values over the box.
    pub integral: f64,
    /// Integrability condition value at `t`.
    pub margin: f64,
    /// Whether the integrability condition was overridden.
    pub overridden: bool,
    /// Whether an overridden grid was rescaled to unit mass; `integral`
    /// keeps the value before rescaling.
    pub rescaled: bool,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Generic 2-D inversion: `cf(theta1, theta2)` must return the characteristic
/// function of the target law. Returns raw (unclipped) values on the grid.
pub fn invert_2d<F: Fn(f64, f64) -> Complex<f64>>(cf: F, spec: &GridSpec) -> Vec<f64> {
    let [n1, n2] = spec.n;
    let dth = [2.0 * std::f64::consts::PI / (n1 as f64 * spec.step(0)), 2.0 * std::f64::consts::PI / (n2 as f64 * spec.step(1))];
    let mut buf = vec![Complex::new(0.0, 0.0); n1 * n2];
    for j1 in 0..n1 {
        let th1 = (j1 as f64 - (n1 / 2) as f64) * dth[0];
        for j2 in 0..n2 {
            let th2 = (j2 as f64 - (n2 / 2) as f64) * dth[1];
            let phase = Complex::from_polar(1.0, -(th1 * spec.lo[0] + th2 * spec.lo[1]));
            buf[j1 * n2 + j2] = cf(th1, th2) * phase;
        }
    }
    spectrum_to_density(buf, spec, dth)
}

/// Forward 2-D FFT of the shifted spectrum followed by the `(-1)^(i1+i2)`
/// demodulation and scaling.
fn spectrum_to_density(mut buf: Vec<Complex<f64>>, spec: &GridSpec, dth: [f64; 2]) -> Vec<f64> {
    let [n1, n2] = spec.n;
    let (f1, f2) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n1), p.plan_fft_forward(n2))
    });
    f2.process(&mut buf);
    let mut col = vec![Complex::new(0.0, 0.0); n1];
    for j2 in 0..n2 {
        for j1 in 0..n1 {
            col[j1] = buf[j1 * n2 + j2];
        }
        f1.process(&mut col);
        for j1 in 0..n1 {
            buf[j1 * n2 + j2] = col[j1];
        }
    }
    let scale = dth[0] * dth[1] / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
    buf.iter()
        .enumerate()
        .map(|(idx, z)| {
            let (i1, i2) = (idx / n2, idx % n2);
            let sign = if (i1 + i2) % 2 == 0 { 1.0 } else { -1.0 };
            sign * scale * z.re
        })
        .collect()
}

/// Spectrum of `Y(t)` shifted to the grid origin, evaluated with the
/// idiosyncratic factors tabulated once per axis.
fn wvag_spectrum(p: &WvagParams<f64>, t: f64, spec: &GridSpec, dth: [f64; 2]) -> Vec<Complex<f64>> {
    let [n1, n2] = spec.n;
    let alpha = p.alpha();
    let mu = p.mu();
    let s = p.sigma();
    let m = p.m();
    let beta = p.beta().0;
    let a = p.a();
    let amin = alpha[0].min(alpha[1]);
    let (q11, q12, q22) = (alpha[0] * s.get(0, 0), amin * s.get(0, 1), alpha[1] * s.get(1, 1));

    let axis = |k: usize, n: usize| -> (Vec<f64>, Vec<Complex<f64>>) {
        let mut th = Vec::with_capacity(n);
        let mut fac = Vec::with_capacity(n);
        for j in 0..n {
            let x = (j as f64 - (n / 2) as f64) * dth[k];
            let z = Complex::new(1.0 + 0.5 * alpha[k] * s.get(k, k) * x * x, -alpha[k] * mu[k] * x);
            let ln = -z.ln() * (beta[k] * t) + Complex::new(0.0, x * (m[k] * t - spec.lo[k]));
            th.push(x);
            fac.push(ln.exp());
        }
        (th, fac)
    };
    let (th1, g1) = axis(0, n1);
    let (th2, g2) = axis(1, n2);

    let mut buf = Vec::with_capacity(n1 * n2);
    for j1 in 0..n1 {
        let x1 = th1[j1];
        for j2 in 0..n2 {
            let x2 = th2[j2];
            let z = Complex::new(
                1.0 + 0.5 * (q11 * x1 * x1 + 2.0 * q12 * x1 * x2 + q22 * x2 * x2),
                -(alpha[0] * mu[0] * x1 + alpha[1] * mu[1] * x2),
            );
            let common = (-z.ln() * (a * t)).exp();
            buf.push(common * g1[j1] * g2[j2]);
        }
    }
    buf
}

/// Joint density of `Y(t)` on `spec`.
pub fn joint_density(p: &WvagParams<f64>, t: f64, spec: &GridSpec, opts: InversionOptions) -> Result<DensityGrid> {
    if p.dim() != 2 {
        return Err(Error::Dimension(format!("joint inversion needs n = 2, got {}", p.dim())));
    }
    if !p.sigma().is_positive_definite() {
        return Err(Error::SingularSigma);
    }
    let inv = fourier_invertible(p, t);
    if !inv.invertible {
        if !opts.override_invertibility {
            return Err(Error::NotInvertible { t, margin: inv.margin });
        }
        log::debug!(
            "inverting at t = {t} although the integrability condition fails ({:.6} <= 1/2)",
            inv.margin
        );
    }

    let [n1, n2] = spec.n;
    let dth = [2.0 * std::f64::consts::PI / (n1 as f64 * spec.step(0)), 2.0 * std::f64::consts::PI / (n2 as f64 * spec.step(1))];
    let raw = spectrum_to_density(wvag_spectrum(p, t, spec, dth), spec, dth);

    let theta_max = [spec.theta_max(0), spec.theta_max(1)];
    let truncation_level = [
        [theta_max[0], 0.0],
        [0.0, theta_max[1]],
        [theta_max[0], theta_max[1]],
        [theta_max[0], -theta_max[1]],
    ]
    .iter()
    .map(|th| char_fn(p, t, th).norm())
    .fold(0.0, f64::max);

    let mut tail_mass_bound = 0.0;
    for k in 0..2 {
        let law = marginal_law(p, k, t)?;
        tail_mass_bound += law.cdf(spec.lo[k]) + (1.0 - law.cdf(spec.hi[k]));
    }

    let mut grid = DensityGrid::from_raw(t, *spec, raw, theta_max, truncation_level, tail_mass_bound, inv.margin, !inv.invertible);
    if grid.tail_mass_bound < TAIL_MASS_GATE && (grid.integral - 1.0).abs() > NORMALIZATION_TOL {
        if !grid.overridden {
            return Err(Error::GridTooCoarse { integral: grid.integral });
        }
        // A non-integrable exponent leaves ripple the grid cannot resolve;
        // rescale to unit mass so likelihoods stay comparable.
        let s = 1.0 / grid.integral;
        grid.values.iter_mut().for_each(|v| *v *= s);
        grid.rescaled = true;
    }
    Ok(grid)
}

impl DensityGrid {
    #[allow(clippy::too_many_arguments)]
    fn from_raw(
        t: f64,
        spec: GridSpec,
        mut values: Vec<f64>,
        theta_max: [f64; 2],
        truncation_level: f64,
        tail_mass_bound: f64,
        margin: f64,
        overridden: bool,
    ) -> Self {
        let cell = spec.step(0) * spec.step(1);
        let mut min_raw = f64::INFINITY;
        let mut clipped = 0.0;
        for v in values.iter_mut() {
            min_raw = min_raw.min(*v);
            if *v < 0.0 {
                clipped -= *v;
                *v = 0.0;
            }
        }
        let mut grid = DensityGrid {
            t,
            spec,
            values,
            theta_max,
            truncation_level,
            tail_mass_bound,
            clipped_mass: clipped * cell,
            min_raw,
            integral: 0.0,
            margin,
            overridden,
            rescaled: false,
        };
        grid.integral = grid.trapezoid_integral();
        grid
    }

    /// Wraps precomputed values (for example from [`invert_2d`]) without
    /// model-specific diagnostics.
    pub fn from_values(t: f64, spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n[0] * spec.n[1] {
            return Err(Error::Dimension(format!("{} values for a {}x{} grid", values.len(), spec.n[0], spec.n[1])));
        }
        let theta_max = [spec.theta_max(0), spec.theta_max(1)];
        Ok(DensityGrid::from_raw(t, spec, values, theta_max, f64::NAN, f64::NAN, f64::NAN, false))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, i1: usize, i2: usize) -> f64 {
        self.values[i1 * self.spec.n[1] + i2]
    }

    fn trapezoid_integral(&self) -> f64 {
        let [n1, n2] = self.spec.n;
        let mut sum = 0.0;
        for i1 in 0..n1 {
            let w1 = if i1 == 0 || i1 == n1 - 1 { 0.5 } else { 1.0 };
            for i2 in 0..n2 {
                let w2 = if i2 == 0 || i2 == n2 - 1 { 0.5 } else { 1.0 };
                sum += w1 * w2 * self.value(i1, i2);
            }
        }
        sum * self.spec.step(0) * self.spec.step(1)
    }

    /// Fractional cell coordinates of `y` along axis `k`, or `None` outside.
    #[inline]
    fn locate(&self, k: usize, y: f64) -> Option<(usize, f64)> {
        let u = (y - self.spec.lo[k]) / self.spec.step(k);
        let n = self.spec.n[k];
        if !(u >= 0.0 && u <= (n - 1) as f64) {
            return None;
        }
        let i = (u.floor() as usize).min(n - 2);
        Some((i, u - i as f64))
    }

    /// Bilinear interpolation; zero outside the box.
    pub fn density_at(&self, y: [f64; 2]) -> f64 {
        let (Some((i, u)), Some((j, v))) = (self.locate(0, y[0]), self.locate(1, y[1])) else {
            return 0.0;
        };
        let f00 = self.value(i, j);
        let f01 = self.value(i, j + 1);
        let f10 = self.value(i + 1, j);
        let f11 = self.value(i + 1, j + 1);
        (1.0 - u) * ((1.0 - v) * f00 + v * f01) + u * ((1.0 - v) * f10 + v * f11)
    }

    pub fn ln_density_at(&self, y: [f64; 2]) -> f64 {
        self.density_at(y).max(DENSITY_FLOOR).ln()
    }

    /// Sum of log-densities of the observations.
    pub fn log_likelihood(&self, obs: &[[f64; 2]]) -> f64 {
        obs.iter().map(|&y| self.ln_density_at(y)).sum()
    }

    /// Density of `Y_2(t)` along the row through `y1`, linearly interpolated
    /// between neighbouring grid rows.
    fn row_at(&self, y1: f64) -> Option<Vec<f64>> {
        let (i, u) = self.locate(0, y1)?;
        let n2 = self.spec.n[1];
        Some((0..n2).map(|j| (1.0 - u) * self.value(i, j) + u * self.value(i + 1, j)).collect())
    }

    /// Writes `y1,y2,f` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "y1,y2,f")?;
        let [n1, n2] = self.spec.n;
        for i1 in 0..n1 {
            let y1 = self.spec.node(0, i1);
            for i2 in 0..n2 {
                writeln!(w, "{},{},{:e}", y1, self.spec.node(1, i2), self.value(i1, i2))?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }
}

/// Distribution function of `Y_2(t)` given `Y_1(t) = y1`, read off a grid.
#[derive(Clone, Debug)]
pub struct ConditionalCdf {
    lo: f64,
    step: f64,
    cumulative: Vec<f64>,
    /// Marginal density of `Y_1` at the conditioning value.
    pub marginal_density: f64,
}

/// Minimum marginal density accepted by [`conditional_cdf`].
pub const MIN_MARGINAL_DENSITY: f64 = 1e-12;

pub fn conditional_cdf(grid: &DensityGrid, y1: f64) -> Result<ConditionalCdf> {
    let row = grid.row_at(y1).ok_or(Error::NearZeroMarginal { y1, density: 0.0 })?;
    let step = grid.spec.step(1);
    let mut cumulative = Vec::with_capacity(row.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in row.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * step;
        cumulative.push(acc);
    }
    if !(acc > MIN_MARGINAL_DENSITY) {
        return Err(Error::NearZeroMarginal { y1, density: acc });
    }
    for c in cumulative.iter_mut() {
        *c /= acc;
    }
    Ok(ConditionalCdf {
        lo: grid.spec.lo[1],
        step,
        cumulative,
        marginal_density: acc,
    })
}

impl ConditionalCdf {
    pub fn eval(&self, y2: f64) -> f64 {
        let u = (y2 - self.lo) / self.step;
        if u <= 0.0 {
            return 0.0;
        }
        let last = self.cumulative.len() - 1;
        if u >= last as f64 {
            return 1.0;
        }
        let i = u.floor() as usize;
        let w = u - i as f64;
        ((1.0 - w) * self.cumulative[i] + w * self.cumulative[i + 1]).clamp(0.0, 1.0)
    }
}

/// Exact marginal law of `Y_k(t)`: `m_k t + VG^1(1/alpha_k, mu_k, sigma_kk)(t)`.
pub fn marginal_law(p: &WvagParams<f64>, k: usize, t: f64) -> Result<VgMarginal> {
    if k >= p.dim() {
        return Err(Error::Dimension(format!("component {k} of a {}-dimensional model", p.dim())));
    }
    VgMarginal::new(1.0 / p.alpha()[k], p.mu()[k], p.sigma().get(k, k), p.m()[k], t)
}

/// Marginal density of `Y_k(t)` on `n` equispaced nodes of `[lo, hi]` by
/// one-dimensional Fourier inversion.
pub fn marginal_density_inverted(p: &WvagParams<f64>, k: usize, t: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    let law = marginal_law(p, k, t)?;
    if !law.density_bounded() {
        return Err(Error::NotInvertible { t, margin: law.shape() });
    }
    let dy = (hi - lo) / (n - 1) as f64;
    let dth = 2.0 * std::f64::consts::PI / (n as f64 * dy);
    let b = law.b;
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|j| {
            let th = (j as f64 - (n / 2) as f64) * dth;
            let z = Complex::new(1.0 + 0.5 * law.sigma2 * th * th / b, -law.mu * th / b);
            (-z.ln() * (b * t) + Complex::new(0.0, th * (law.drift * t - lo))).exp()
        })
        .collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    let scale = dth / (2.0 * std::f64::consts::PI);
    Ok(buf
        .iter()
        .enumerate()
        .map(|(i, z)| if i % 2 == 0 { scale * z.re } else { -scale * z.re })
        .collect())
}
