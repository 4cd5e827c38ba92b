#![allow(dead_code)]

use proptest::prelude::*;
use wvag::Params;

/// Simulation design `a = 1`, `alpha = (0.8, 0.6)`, `mu = (0.1, -0.3)`,
/// `Sigma = [[1, 0.6], [0.6, 1.2]]`, `m = (-0.1, 0.3)`.
pub fn truth() -> Params {
    wvag::study::reference_truth()
}

/// Feasible bivariate parameters with `a alpha_k` bounded away from 1.
pub fn feasible() -> impl Strategy<Value = Params> {
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

/// Sample mean and its standard error.
pub fn mean_se(x: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = x.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Whether `|est - target| <= k se`, printing the comparison on failure.
pub fn within(label: &str, est: f64, se: f64, target: f64, k: f64) -> bool {
    let ok = (est - target).abs() <= k * se;
    if !ok {
        eprintln!("{label}: estimate {est} vs {target}, {:.2} standard errors", (est - target).abs() / se);
    }
    ok
}
