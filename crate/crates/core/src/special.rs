//! Special functions and the closed-form univariate VG law.

use statrs::function::{erf, gamma};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// Upper tail of the chi-squared distribution with `df` degrees of freedom,
/// via the regularized upper incomplete gamma function.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma::gamma_ur(0.5 * df, 0.5 * x)
}

/// `ln K_nu(x)` for real order and `x > 0`.
///
/// Uses `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` with the
/// trapezoid rule, which converges geometrically for this integrand. The
/// sum is accumulated in log space so neither large `x` nor large `nu`
/// overflows.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "ln_bessel_k needs x > 0");
    let nu = nu.abs();
    let g = |t: f64| -x * (t.cosh() - 1.0) + ln_cosh(nu * t);

    // peak of the integrand: x sinh t = nu tanh(nu t) ~ nu
    let t_peak = if nu > 0.0 { (nu / x).asinh() } else { 0.0 };
    let curvature = x * t_peak.cosh() + 1e-300;
    let h = (0.8 / curvature.sqrt()).min(0.25);
    let g_peak = g(t_peak);

    let mut sum = 0.5 * (g(0.0) - g_peak).exp();
    let mut t = h;
    loop {
        let v = g(t) - g_peak;
        sum += v.exp();
        if t > t_peak && v < -46.0 {
            break;
        }
        t += h;
    }
    (sum * h).ln() + g_peak - x
}

#[inline]
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Globally adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]`: the
/// interval with the largest error estimate is bisected until the summed
/// estimate is below `abs_tol` or roundoff makes further splitting useless.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 4000;
    let (k, e) = gauss_kronrod_15(&f, a, b);
    let mut parts = vec![(a, b, k, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(4.0 * f64::EPSILON * total.abs()) {
            return Ok(total);
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = parts[worst];
        let mid = 0.5 * (lo + hi);
        if parts.len() >= MAX_INTERVALS || mid <= lo || mid >= hi {
            if err <= 1e-9 * (1.0 + total.abs()) {
                return Ok(total);
            }
            return Err(Error::Quadrature(format!(
                "no convergence on [{a}, {b}], error estimate {err:e}"
            )));
        }
        let (k1, e1) = gauss_kronrod_15(&f, lo, mid);
        let (k2, e2) = gauss_kronrod_15(&f, mid, hi);
        parts[worst] = (lo, mid, k1, e1);
        parts.push((mid, hi, k2, e2));
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Law of `drift t + V(t)` with `V ~ VG^1(b, mu, sigma2)`: a normal variance
/// mixture over `G ~ Gamma(shape b t, rate b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VgMarginal {
    pub b: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub drift: f64,
    pub t: f64,
}

impl VgMarginal {
    pub fn new(b: f64, mu: f64, sigma2: f64, drift: f64, t: f64) -> Result<Self> {
        if !(b > 0.0 && sigma2 > 0.0 && t > 0.0) || !mu.is_finite() || !drift.is_finite() {
            return Err(Error::Infeasible(format!(
                "VG marginal needs b, sigma2, t > 0 (got b={b}, sigma2={sigma2}, t={t})"
            )));
        }
        Ok(VgMarginal { b, mu, sigma2, drift, t })
    }

    #[inline]
    pub fn shape(&self) -> f64 {
        self.b * self.t
    }

    pub fn mean(&self) -> f64 {
        (self.drift + self.mu) * self.t
    }

    pub fn variance(&self) -> f64 {
        (self.sigma2 + self.mu * self.mu / self.b) * self.t
    }

    /// The density is bounded (no singularity at the drift point) iff the
    /// gamma shape exceeds one half.
    pub fn density_bounded(&self) -> bool {
        self.shape() > 0.5
    }

    /// Closed-form log-density through the modified Bessel function of the
    /// second kind. Returns `+inf` at the singular point when the shape is at
    /// most one half.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let y = x - self.drift * self.t;
        let s = self.shape();
        let nu = s - 0.5;
        let big_a = y * y / (2.0 * self.sigma2);
        let big_b = self.b + self.mu * self.mu / (2.0 * self.sigma2);
        let head = s * self.b.ln() - ln_gamma(s) - 0.5 * (LN_2PI + self.sigma2.ln()) + y * self.mu / self.sigma2;
        if big_a < 1e-300 {
            if nu > 0.0 {
                return head + ln_gamma(nu) - nu * big_b.ln();
            }
            return f64::INFINITY;
        }
        let z = 2.0 * (big_a * big_b).sqrt();
        head + std::f64::consts::LN_2 + 0.5 * nu * (big_a.ln() - big_b.ln()) + ln_bessel_k(nu, z)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Distribution function by quadrature over the gamma mixing variable.
    pub fn cdf(&self, x: f64) -> f64 {
        let y = x - self.drift * self.t;
        let sd = self.sigma2.sqrt();
        let (mu, b, s) = (self.mu, self.b, self.shape());
        let cond = move |g: f64| -> f64 {
            if g <= 0.0 {
                return if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    0.0
                } else {
                    0.5
                };
            }
            normal_cdf((y - mu * g) / (sd * g.sqrt()))
        };
        let u_max = s + 12.0 * s.sqrt() + 45.0;
        let result = if s < 1.0 {
            // v = u^s flattens the u^(s-1) singularity of the gamma density
            let norm = (-ln_gamma(s + 1.0)).exp();
            let v_max = u_max.powf(s);
            integrate(
                |v| {
                    let u = v.powf(1.0 / s);
                    cond(u / b) * (-u).exp()
                },
                0.0,
                v_max,
                1e-13,
            )
            .map(|r| r * norm)
        } else {
            let lg = ln_gamma(s);
            let u_min = (s - 14.0 * s.sqrt() - 10.0).max(0.0);
            integrate(
                |u| {
                    if u <= 0.0 {
                        return 0.0;
                    }
                    cond(u / b) * ((s - 1.0) * u.ln() - u - lg).exp()
                },
                u_min,
                u_max,
                1e-13,
            )
        };
        result.unwrap_or(f64::NAN).clamp(0.0, 1.0)
    }

    /// Inverse distribution function by bracketing and bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0);
        let sd = self.variance().sqrt();
        let mut lo = self.mean() - 4.0 * sd;
        let mut hi = self.mean() + 4.0 * sd;
        while self.cdf(lo) > p {
            lo -= 4.0 * sd;
        }
        while self.cdf(hi) < p {
            hi += 4.0 * sd;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}
