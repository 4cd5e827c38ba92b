//! Local polynomial regression (LOESS) on scattered points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoessConfig {
    /// Fraction of points in each local neighbourhood.
    pub span: f64,
    /// Local polynomial degree, 1 or 2.
    pub degree: usize,
    /// Bisquare robustness iterations.
    pub iterations: usize,
}

impl Default for LoessConfig {
    fn default() -> Self {
        LoessConfig { span: 0.75, degree: 2, iterations: 0 }
    }
}

impl LoessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0 && self.span <= 1.0) {
            return Err(Error::InvalidInput(format!("LOESS span must lie in (0, 1], got {}", self.span)));
        }
        if !(self.degree == 1 || self.degree == 2) {
            return Err(Error::InvalidInput(format!("LOESS degree must be 1 or 2, got {}", self.degree)));
        }
        Ok(())
    }
}

/// Monomials of total degree at most `degree` in `x - x0`.
fn basis(x: &[f64], x0: &[f64], degree: usize) -> Vec<f64> {
    let d: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let mut out = vec![1.0];
    out.extend(&d);
    if degree == 2 {
        for i in 0..d.len() {
            for j in i..d.len() {
                out.push(d[i] * d[j]);
            }
        }
    }
    out
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u * u * u;
        v * v * v
    }
}

/// Smoothed values at the input points.
pub fn loess(x: &[Vec<f64>], y: &[f64], cfg: &LoessConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(Error::Dimension(format!("{} points and {} responses", n, y.len())));
    }
    let q = ((cfg.span * n as f64).floor() as usize).clamp(1, n);
    let mut robust = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    for iter in 0..=cfg.iterations {
        for i in 0..n {
            let dist: Vec<f64> = x
                .iter()
                .map(|xj| xj.iter().zip(&x[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            let mut sorted = dist.clone();
            sorted.sort_by(f64::total_cmp);
            // widen slightly so the q-th neighbour keeps a positive weight
            let h = sorted[q - 1] * (1.0 + 1e-10) + 1e-300;
            let p = basis(&x[i], &x[i], cfg.degree).len();
            let mut ata = DMatrix::<f64>::zeros(p, p);
            let mut atb = DVector::<f64>::zeros(p);
            for j in 0..n {
                let w = tricube(dist[j] / h) * robust[j];
                if w <= 0.0 {
                    continue;
                }
                let b = basis(&x[j], &x[i], cfg.degree);
                for r in 0..p {
                    atb[r] += w * b[r] * y[j];
                    for c in 0..p {
                        ata[(r, c)] += w * b[r] * b[c];
                    }
                }
            }
            let sol = ata
                .clone()
                .svd(true, true)
                .solve(&atb, 1e-12)
                .map_err(|e| Error::DegenerateGrid(format!("LOESS local fit failed: {e}")))?;
            fitted[i] = sol[0];
        }
        if iter < cfg.iterations {
            let mut res: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| (a - b).abs()).collect();
            let resid = res.clone();
            res.sort_by(f64::total_cmp);
            let s = 6.0 * res[n / 2];
            for j in 0..n {
                let u = if s > 0.0 { resid[j] / s } else { 0.0 };
                robust[j] = if u < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
            }
        }
    }
    Ok(fitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_quadratics_exactly() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                let (u, v) = (i as f64 / 9.0, j as f64 / 9.0);
                x.push(vec![u, v]);
                y.push(1.0 + 2.0 * u - v + 3.0 * u * v - 0.5 * v * v);
            }
        }
        let f = loess(&x, &y, &LoessConfig::default()).unwrap();
        for (a, b) in f.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn smooths_noise() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
        let y: Vec<f64> = (0..100).map(|i| (i as f64 / 99.0).powi(2) + if i % 2 == 0 { 0.05 } else { -0.05 }).collect();
        let f = loess(&x, &y, &LoessConfig::default()).unwrap();
        for (i, v) in f.iter().enumerate().skip(5).take(90) {
            assert!((v - (i as f64 / 99.0).powi(2)).abs() < 0.01);
        }
    }

    #[test]
    fn robustness_downweights_outlier() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let mut y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        y[20] = 100.0;
        let cfg = LoessConfig { iterations: 3, degree: 1, span: 0.5 };
        let f = loess(&x, &y, &cfg).unwrap();
        assert!((f[20] - 20.0).abs() < 0.5, "{}", f[20]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(loess(&[vec![0.0]], &[1.0], &LoessConfig { span: 0.0, ..Default::default() }).is_err());
        assert!(loess(&[vec![0.0]], &[1.0], &LoessConfig { degree: 3, ..Default::default() }).is_err());
    }
}
