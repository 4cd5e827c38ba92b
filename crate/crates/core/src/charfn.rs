//! Lévy exponents and characteristic functions.

use num_complex::Complex;

use crate::model::{VgParams, WvagParams};
use crate::scalar::{lit, Field, Real};

/// A Lévy process law identified by its characteristic exponent `Psi`, so
/// that `E exp(i <theta, X(t)>) = exp(t Psi(theta))`.
pub trait LevyExponent<T: Real> {
    fn dim(&self) -> usize;

    fn exponent(&self, theta: &[T]) -> Complex<T>;

    fn char_fn(&self, t: T, theta: &[T]) -> Complex<T> {
        (self.exponent(theta) * t).exp()
    }
}

/// `-b ln(1 - i <mu, theta> / b + |theta|^2_sigma / (2 b))`, principal branch.
pub fn vg_exponent<T: Real>(p: &VgParams<T>, theta: &[T]) -> Complex<T> {
    debug_assert_eq!(theta.len(), p.dim());
    let b = p.b;
    let lin = dot(&p.mu, theta);
    let quad = p.sigma.quad_form(theta);
    let arg = Complex::new(T::one() + quad / (b + b), -lin / b);
    debug_assert!(arg.re > T::zero());
    -arg.ln() * b
}

/// Exponent of the WVAG process (without the deterministic drift):
///
/// ```text
/// Psi(theta) = -a ln{1 - i <alpha<>mu, theta> + |theta|^2_{alpha<>sigma} / 2}
///              - sum_k beta_k ln{1 - i alpha_k mu_k theta_k + alpha_k sigma_kk theta_k^2 / 2}
/// ```
pub fn wvag_exponent<T: Real>(p: &WvagParams<T>, theta: &[T]) -> Complex<T> {
    let n = p.dim();
    debug_assert_eq!(theta.len(), n);
    let half: T = lit(0.5);
    let alpha = p.alpha();
    let mu = p.mu();
    let sigma = p.sigma();

    let mut lin = T::zero();
    let mut quad = T::zero();
    for k in 0..n {
        lin = lin + alpha[k] * mu[k] * theta[k];
        for l in 0..n {
            let w = if alpha[k] < alpha[l] { alpha[k] } else { alpha[l] };
            quad = quad + theta[k] * theta[l] * sigma.get(k, l) * w;
        }
    }
    let common = Complex::new(T::one() + half * quad, -lin);
    debug_assert!(common.re > T::zero());
    let mut psi = -common.ln() * p.a();

    for (k, &beta) in p.beta().0.iter().enumerate() {
        let z = Complex::new(
            T::one() + half * alpha[k] * sigma.get(k, k) * theta[k] * theta[k],
            -alpha[k] * mu[k] * theta[k],
        );
        psi = psi - z.ln() * beta;
    }
    psi
}

/// Characteristic function of `Y(t) = m t + X(t)`.
pub fn char_fn<T: Real>(p: &WvagParams<T>, t: T, theta: &[T]) -> Complex<T> {
    let drift = dot(p.m(), theta) * t;
    (wvag_exponent(p, theta) * t + Complex::new(T::zero(), drift)).exp()
}

impl<T: Real> LevyExponent<T> for VgParams<T> {
    fn dim(&self) -> usize {
        VgParams::dim(self)
    }

    fn exponent(&self, theta: &[T]) -> Complex<T> {
        vg_exponent(self, theta)
    }
}

impl<T: Real> LevyExponent<T> for WvagParams<T> {
    fn dim(&self) -> usize {
        WvagParams::dim(self)
    }

    fn exponent(&self, theta: &[T]) -> Complex<T> {
        wvag_exponent(self, theta)
    }
}

/// Value of the integrability condition `(a / n + min_k beta_k) t` and
/// whether it exceeds one half.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Invertibility<T> {
    pub margin: T,
    pub invertible: bool,
}

/// Sufficient condition for `Phi_{X(t)}` (and hence `Phi_{Y(t)}`) to be
/// integrable when `sigma` is invertible.
pub fn fourier_invertible<T: Field>(p: &WvagParams<T>, t: T) -> Invertibility<T> {
    let n = T::from_usize(p.dim()).expect("dimension fits in scalar");
    let margin = (p.a() / n + p.beta().min()) * t;
    let half = T::one() / (T::one() + T::one());
    Invertibility {
        margin,
        invertible: margin > half,
    }
}

fn dot<T: Field>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Rational64;
    use proptest::prelude::*;

    fn truth() -> WvagParams<f64> {
        WvagParams::bivariate(1.0, [0.8, 0.6], [0.1, -0.3], [[1.0, 0.6], [0.6, 1.2]], [-0.1, 0.3]).unwrap()
    }

    fn decomposition_sum(p: &WvagParams<f64>, theta: &[f64]) -> Complex<f64> {
        let d = p.decompose();
        let mut s = vg_exponent(&d.common, theta);
        for (k, v) in d.idiosyncratic.iter().enumerate() {
            s += vg_exponent(v, &[theta[k]]);
        }
        s
    }

    prop_compose! {
        fn feasible()(a in 0.05f64..3.0, f1 in 0.02f64..0.98, f2 in 0.02f64..0.98,
                      mu1 in -1.0f64..1.0, mu2 in -1.0f64..1.0,
                      s1 in 0.05f64..3.0, s2 in 0.05f64..3.0, rho in -0.99f64..0.99,
                      m1 in -1.0f64..1.0, m2 in -1.0f64..1.0) -> WvagParams<f64> {
            let s12 = rho * (s1 * s2).sqrt();
            WvagParams::bivariate(a, [f1 / a, f2 / a], [mu1, mu2], [[s1, s12], [s12, s2]], [m1, m2]).unwrap()
        }
    }

    #[test]
    fn vg_exponent_examples() {
        let p = VgParams::univariate(1.0, 0.0, 1.0).unwrap();
        assert_eq!(vg_exponent(&p, &[0.0]), Complex::new(0.0, 0.0));
        let v = vg_exponent(&p, &[1.0]);
        assert_abs_diff_eq!(v.re, -(1.5f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn wvag_exponent_at_truth_matches_decomposition() {
        let p = truth();
        let v = wvag_exponent(&p, &[1.0, 1.0]);
        let d = decomposition_sum(&p, &[1.0, 1.0]);
        assert!((v - d).norm() < 1e-12);
        assert_eq!(wvag_exponent(&p, &[0.0, 0.0]), Complex::new(0.0, 0.0));
    }

    #[test]
    fn char_fn_basics() {
        let p = truth();
        assert!((char_fn(&p, 1.0, &[0.0, 0.0]) - Complex::new(1.0, 0.0)).norm() < 1e-15);
        let q = p.with_drift(vec![5.0, -7.0]).unwrap();
        for th in [[0.3, -1.2], [2.0, 0.5]] {
            let a = char_fn(&p, 0.7, &th).norm();
            let b = char_fn(&q, 0.7, &th).norm();
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn invertibility_examples_exact() {
        let p = WvagParams::bivariate(
            Rational64::new(1, 1),
            [Rational64::new(4, 5), Rational64::new(3, 5)],
            [Rational64::new(1, 10), Rational64::new(-3, 10)],
            [
                [Rational64::new(1, 1), Rational64::new(3, 5)],
                [Rational64::new(3, 5), Rational64::new(6, 5)],
            ],
            [Rational64::new(-1, 10), Rational64::new(3, 10)],
        )
        .unwrap();
        let one = fourier_invertible(&p, Rational64::new(1, 1));
        assert_eq!(one.margin, Rational64::new(3, 4));
        assert!(one.invertible);
        let tenth = fourier_invertible(&p, Rational64::new(1, 10));
        assert_eq!(tenth.margin, Rational64::new(3, 40));
        assert!(!tenth.invertible);
        assert!(fourier_invertible(&p, Rational64::new(1000, 1)).invertible);
    }

    #[test]
    fn invertibility_f64() {
        let inv = fourier_invertible(&truth(), 0.1);
        assert!((inv.margin - 0.075).abs() < 1e-12);
        assert!(!inv.invertible);
    }

    #[test]
    fn generic_over_f32() {
        let p = WvagParams::<f32>::bivariate(1.0, [0.8, 0.6], [0.1, -0.3], [[1.0, 0.6], [0.6, 1.2]], [0.0, 0.0]).unwrap();
        let v32 = wvag_exponent(&p, &[0.5, -0.25]);
        let v64 = wvag_exponent(&truth(), &[0.5, -0.25]);
        assert!((v32.re as f64 - v64.re).abs() < 1e-5);
        assert!((v32.im as f64 - v64.im).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn exponent_properties(p in feasible(), t1 in -20.0f64..20.0, t2 in -20.0f64..20.0) {
            let th = [t1, t2];
            let v = wvag_exponent(&p, &th);
            prop_assert!(v.re <= 1e-15);
            let neg = wvag_exponent(&p, &[-t1, -t2]);
            prop_assert!((neg - v.conj()).norm() < 1e-12);
            prop_assert!((v - decomposition_sum(&p, &th)).norm() < 1e-12 * (1.0 + v.norm()));
            prop_assert!(char_fn(&p, 1.3, &th).norm() <= 1.0 + 1e-15);
        }

        #[test]
        fn marginal_law(p in feasible(), s in -30.0f64..30.0) {
            for k in 0..2 {
                let mut th = [0.0; 2];
                th[k] = s;
                let v = wvag_exponent(&p, &th);
                let w = vg_exponent(&p.marginal(k), &[s]);
                prop_assert!((v - w).norm() < 1e-12 * (1.0 + v.norm()));
            }
        }

        #[test]
        fn time_scaling(p in feasible(), c in 0.05f64..5.0, t in 0.1f64..3.0,
                        t1 in -10.0f64..10.0, t2 in -10.0f64..10.0) {
            let q = p.time_scaled(c).unwrap();
            let lhs = char_fn(&p, c * t, &[t1, t2]);
            let rhs = char_fn(&q, t, &[t1, t2]);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
