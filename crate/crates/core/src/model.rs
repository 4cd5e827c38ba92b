//! Parameter domain of the weak variance-alpha-gamma (WVAG) model.
//!
//! A WVAG process in `n` dimensions is Brownian motion with drift `mu` and
//! covariance `sigma`, weakly subordinated to an alpha-gamma subordinator
//! with common shape `a` and per-component scales `alpha`. The observed
//! log-return process adds a deterministic drift `m`, so `Y(t) = m t + X(t)`.
//!
//! Everything here is generic over [`Field`] so that constraint checks and
//! derived quantities can be evaluated exactly on rationals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{abs, lit, min, Field};

/// Tolerance for the strict feasibility inequalities.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Dense symmetric `n x n` matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Field> SymMatrix<T> {
    /// Builds a matrix from rows, rejecting ragged or asymmetric input.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "covariance must be square and non-empty, got {} rows",
                n
            )));
        }
        let data: Vec<T> = rows.into_iter().flatten().collect();
        let m = SymMatrix { n, data };
        let scale = m.max_abs_diag();
        let tol = lit::<T>(FEASIBILITY_TOL) * (T::one() + scale);
        for k in 0..n {
            for l in (k + 1)..n {
                if abs(m.get(k, l) - m.get(l, k)) > tol {
                    return Err(Error::Infeasible(format!(
                        "covariance is not symmetric at ({k}, {l})"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m.data[k * m.n + k] = d;
        }
        m
    }

    /// 2 x 2 convenience constructor.
    pub fn bivariate(s11: T, s12: T, s22: T) -> Self {
        SymMatrix {
            n: 2,
            data: vec![s11, s12, s12, s22],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> T {
        self.data[k * self.n + l]
    }

    /// Sets entry `(k, l)` and its mirror.
    pub fn set(&mut self, k: usize, l: usize, v: T) {
        self.data[k * self.n + l] = v;
        self.data[l * self.n + k] = v;
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn scale(&self, s: T) -> Self {
        SymMatrix {
            n: self.n,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// Quadratic form `x' M x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for k in 0..self.n {
            let mut row = T::zero();
            for l in 0..self.n {
                row = row + self.get(k, l) * x[l];
            }
            acc = acc + x[k] * row;
        }
        acc
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|k| (0..self.n).all(|l| k == l || self.get(k, l) == T::zero()))
    }

    fn max_abs_diag(&self) -> T {
        (0..self.n).fold(T::zero(), |acc, k| {
            let d = abs(self.get(k, k));
            if d > acc {
                d
            } else {
                acc
            }
        })
    }

    /// Symmetric Gaussian elimination. Returns the pivots, or `None` when a
    /// negative pivot or a zero pivot with a non-zero remainder shows the
    /// matrix is not positive semidefinite.
    fn pivots(&self) -> Option<Vec<T>> {
        let n = self.n;
        let tol = lit::<T>(FEASIBILITY_TOL) * (T::one() + self.max_abs_diag());
        let mut w = self.data.clone();
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let p = w[k * n + k];
            if p < T::zero() - tol {
                return None;
            }
            if p <= tol {
                if ((k + 1)..n).any(|j| abs(w[k * n + j]) > tol) {
                    return None;
                }
                pivots.push(T::zero());
                continue;
            }
            pivots.push(p);
            for i in (k + 1)..n {
                let f = w[i * n + k] / p;
                for j in (k + 1)..n {
                    w[i * n + j] = w[i * n + j] - f * w[k * n + j];
                }
            }
        }
        Some(pivots)
    }

    pub fn is_psd(&self) -> bool {
        self.pivots().is_some()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.pivots()
            .map(|p| p.iter().all(|&x| x > T::zero()))
            .unwrap_or(false)
    }
}

impl<T: Field> TryFrom<Vec<Vec<T>>> for SymMatrix<T> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        SymMatrix::from_rows(rows)
    }
}

impl<T: Field + Serialize> Serialize for SymMatrix<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de, T: Field + Deserialize<'de>> Deserialize<'de> for SymMatrix<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        SymMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Component-wise product `(t_1 mu_1, ..., t_n mu_n)`.
pub fn outer_diamond_mu<T: Field>(t: &[T], mu: &[T]) -> Result<Vec<T>> {
    check_times(t, mu.len())?;
    Ok(t.iter().zip(mu).map(|(&tk, &mk)| tk * mk).collect())
}

/// Min-scaled covariance: entry `(k, l)` is `sigma_kl * min(t_k, t_l)`.
pub fn outer_diamond_sigma<T: Field>(t: &[T], sigma: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    check_times(t, sigma.dim())?;
    let n = sigma.dim();
    let mut out = SymMatrix::zeros(n);
    for k in 0..n {
        for l in k..n {
            out.set(k, l, sigma.get(k, l) * min(t[k], t[l]));
        }
    }
    Ok(out)
}

fn check_times<T: Field>(t: &[T], n: usize) -> Result<()> {
    if t.len() != n {
        return Err(Error::Dimension(format!(
            "time vector has length {}, expected {}",
            t.len(),
            n
        )));
    }
    if t.iter().any(|&x| x < T::zero()) {
        return Err(Error::InvalidInput("subordinator times must be nonnegative".into()));
    }
    Ok(())
}

/// Parameters of an `n`-dimensional variance-gamma law: Brownian motion with
/// drift `mu` and covariance `sigma` time-changed by a standard gamma
/// subordinator with shape and rate `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Field + Serialize",
    deserialize = "T: Field + Deserialize<'de>"
))]
pub struct VgParams<T> {
    pub b: T,
    pub mu: Vec<T>,
    pub sigma: SymMatrix<T>,
}

impl<T: Field> VgParams<T> {
    pub fn new(b: T, mu: Vec<T>, sigma: SymMatrix<T>) -> Result<Self> {
        if !(b > T::zero()) {
            return Err(Error::Infeasible(format!("VG shape must be positive, got {b:?}")));
        }
        if mu.len() != sigma.dim() {
            return Err(Error::Dimension(format!(
                "drift has length {}, covariance is {}x{}",
                mu.len(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        if !sigma.is_psd() {
            return Err(Error::Infeasible("VG covariance is not positive semidefinite".into()));
        }
        Ok(VgParams { b, mu, sigma })
    }

    /// One-dimensional law `VG(b, mu, sigma2)`.
    pub fn univariate(b: T, mu: T, sigma2: T) -> Result<Self> {
        Self::new(b, vec![mu], SymMatrix::diagonal(&[sigma2]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Idiosyncratic gamma shapes `beta_k = (1 - a alpha_k) / alpha_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Beta<T>(pub Vec<T>);

impl<T: Field> Beta<T> {
    pub fn min(&self) -> T {
        self.0[1..].iter().fold(self.0[0], |acc, &b| min(acc, b))
    }
}

/// Independent pieces whose sum has the WVAG law: a common `n`-dimensional
/// VG part and one univariate VG part per component.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition<T> {
    pub common: VgParams<T>,
    pub idiosyncratic: Vec<VgParams<T>>,
}

/// The WVAG model `(a, alpha, mu, sigma)` together with the deterministic
/// drift `m` of the observed process.
///
/// Instances are always feasible: `a > 0`, `alpha_k > 0`, `a alpha_k < 1`,
/// and `sigma` symmetric positive semidefinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "ParamsRepr<T>",
    into = "ParamsRepr<T>",
    bound(
        serialize = "T: Field + Serialize",
        deserialize = "T: Field + Deserialize<'de>"
    )
)]
pub struct WvagParams<T> {
    a: T,
    alpha: Vec<T>,
    mu: Vec<T>,
    sigma: SymMatrix<T>,
    m: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Field + Serialize",
    deserialize = "T: Field + Deserialize<'de>"
))]
struct ParamsRepr<T> {
    a: T,
    alpha: Vec<T>,
    mu: Vec<T>,
    sigma: SymMatrix<T>,
    #[serde(default)]
    m: Option<Vec<T>>,
}

impl<T: Field> TryFrom<ParamsRepr<T>> for WvagParams<T> {
    type Error = Error;

    fn try_from(r: ParamsRepr<T>) -> Result<Self> {
        let n = r.alpha.len();
        let m = r.m.unwrap_or_else(|| vec![T::zero(); n]);
        WvagParams::new(r.a, r.alpha, r.mu, r.sigma, m)
    }
}

impl<T: Field> From<WvagParams<T>> for ParamsRepr<T> {
    fn from(p: WvagParams<T>) -> Self {
        ParamsRepr {
            a: p.a,
            alpha: p.alpha,
            mu: p.mu,
            sigma: p.sigma,
            m: Some(p.m),
        }
    }
}

impl<T: Field> WvagParams<T> {
    pub fn new(a: T, alpha: Vec<T>, mu: Vec<T>, sigma: SymMatrix<T>, m: Vec<T>) -> Result<Self> {
        let n = alpha.len();
        if n < 2 {
            return Err(Error::Dimension(format!("WVAG needs n >= 2, got {n}")));
        }
        if mu.len() != n || m.len() != n || sigma.dim() != n {
            return Err(Error::Dimension(format!(
                "alpha has length {n} but mu, m, sigma have {}, {}, {}",
                mu.len(),
                m.len(),
                sigma.dim()
            )));
        }
        let tol = lit::<T>(FEASIBILITY_TOL);
        if !(a > tol) {
            return Err(Error::Infeasible(format!("a must be positive, got {a:?}")));
        }
        for (k, &ak) in alpha.iter().enumerate() {
            if !(ak > tol) {
                return Err(Error::Infeasible(format!("alpha_{} must be positive, got {ak:?}", k + 1)));
            }
            if !(a * ak < T::one() - tol) {
                return Err(Error::Infeasible(format!(
                    "a * alpha_{} = {:?} must be below 1",
                    k + 1,
                    a * ak
                )));
            }
        }
        if !sigma.is_psd() {
            return Err(Error::Infeasible("sigma is not positive semidefinite".into()));
        }
        Ok(WvagParams { a, alpha, mu, sigma, m })
    }

    /// Bivariate constructor in the usual `(a, alpha, mu, sigma, m)` layout.
    pub fn bivariate(a: T, alpha: [T; 2], mu: [T; 2], sigma: [[T; 2]; 2], m: [T; 2]) -> Result<Self> {
        let sigma = SymMatrix::from_rows(sigma.iter().map(|r| r.to_vec()).collect())?;
        Self::new(a, alpha.to_vec(), mu.to_vec(), sigma, m.to_vec())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
    #[inline]
    pub fn a(&self) -> T {
        self.a
    }
    #[inline]
    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }
    #[inline]
    pub fn mu(&self) -> &[T] {
        &self.mu
    }
    #[inline]
    pub fn sigma(&self) -> &SymMatrix<T> {
        &self.sigma
    }
    #[inline]
    pub fn m(&self) -> &[T] {
        &self.m
    }

    pub fn beta(&self) -> Beta<T> {
        Beta(
            self.alpha
                .iter()
                .map(|&ak| (T::one() - self.a * ak) / ak)
                .collect(),
        )
    }

    /// The strong (VAG) submodel is the case of a diagonal `sigma`.
    pub fn is_vag(&self) -> bool {
        self.sigma.is_diagonal()
    }

    /// Same model with a different deterministic drift.
    pub fn with_drift(&self, m: Vec<T>) -> Result<Self> {
        Self::new(self.a, self.alpha.clone(), self.mu.clone(), self.sigma.clone(), m)
    }

    /// Same model with the Brownian drift replaced.
    pub fn with_mu(&self, mu: Vec<T>) -> Result<Self> {
        Self::new(self.a, self.alpha.clone(), mu, self.sigma.clone(), self.m.clone())
    }

    /// Same model with one covariance entry replaced.
    pub fn with_sigma_entry(&self, k: usize, l: usize, v: T) -> Result<Self> {
        let mut sigma = self.sigma.clone();
        sigma.set(k, l, v);
        Self::new(self.a, self.alpha.clone(), self.mu.clone(), sigma, self.m.clone())
    }

    /// Splits the law of `X(1)` into independent VG pieces:
    /// `V_0 ~ VG^n(a, a alpha<>mu, a alpha<>sigma)` and
    /// `V_k ~ VG^1(beta_k, (1 - a alpha_k) mu_k, (1 - a alpha_k) sigma_kk)`.
    pub fn decompose(&self) -> Decomposition<T> {
        let a = self.a;
        let drift = outer_diamond_mu(&self.alpha, &self.mu).expect("dims checked at construction");
        let cov = outer_diamond_sigma(&self.alpha, &self.sigma).expect("dims checked at construction");
        let common = VgParams {
            b: a,
            mu: drift.into_iter().map(|x| a * x).collect(),
            sigma: cov.scale(a),
        };
        let beta = self.beta();
        let idiosyncratic = (0..self.dim())
            .map(|k| {
                let w = T::one() - a * self.alpha[k];
                VgParams {
                    b: beta.0[k],
                    mu: vec![w * self.mu[k]],
                    sigma: SymMatrix::diagonal(&[w * self.sigma.get(k, k)]),
                }
            })
            .collect();
        Decomposition {
            common,
            idiosyncratic,
        }
    }

    /// Marginal law of component `k`: `VG^1(1/alpha_k, mu_k, sigma_kk)`.
    pub fn marginal(&self, k: usize) -> VgParams<T> {
        VgParams {
            b: T::one() / self.alpha[k],
            mu: vec![self.mu[k]],
            sigma: SymMatrix::diagonal(&[self.sigma.get(k, k)]),
        }
    }

    /// Parameters of the time-changed process `X(c t)`:
    /// `(c a, alpha / c, c mu, c sigma)`, with the drift scaled alike.
    pub fn time_scaled(&self, c: T) -> Result<Self> {
        Self::new(
            c * self.a,
            self.alpha.iter().map(|&x| x / c).collect(),
            self.mu.iter().map(|&x| c * x).collect(),
            self.sigma.scale(c),
            self.m.iter().map(|&x| c * x).collect(),
        )
    }

    /// Covariance of `X_k(1)` and `X_l(1)` for `k != l`:
    /// `a min(alpha_k, alpha_l) sigma_kl + a alpha_k alpha_l mu_k mu_l`.
    pub fn cross_covariance(&self, k: usize, l: usize) -> T {
        let a = self.a;
        a * min(self.alpha[k], self.alpha[l]) * self.sigma.get(k, l)
            + a * self.alpha[k] * self.alpha[l] * self.mu[k] * self.mu[l]
    }

    /// Largest `a` allowed for the current `alpha`: `min_k 1 / alpha_k`.
    pub fn a_upper_bound(&self) -> T {
        let amax = self.alpha.iter().fold(self.alpha[0], |acc, &x| if x > acc { x } else { acc });
        T::one() / amax
    }
}

impl WvagParams<f64> {
    /// Correlation of the Brownian components 1 and 2.
    pub fn rho(&self) -> f64 {
        let s = &self.sigma;
        s.get(0, 1) / (s.get(0, 0) * s.get(1, 1)).sqrt()
    }
}

/// Names of the ten bivariate parameters, in the order used by
/// [`WvagParams::to_vector`] and every report table.
pub const PARAM_NAMES: [&str; 10] = [
    "a", "alpha1", "alpha2", "mu1", "mu2", "sigma11", "sigma22", "sigma12", "m1", "m2",
];

impl<T: Field> WvagParams<T> {
    /// Flattens a bivariate parameter set in [`PARAM_NAMES`] order.
    pub fn to_vector(&self) -> [T; 10] {
        assert_eq!(self.dim(), 2, "flattening is defined for the bivariate model");
        [
            self.a,
            self.alpha[0],
            self.alpha[1],
            self.mu[0],
            self.mu[1],
            self.sigma.get(0, 0),
            self.sigma.get(1, 1),
            self.sigma.get(0, 1),
            self.m[0],
            self.m[1],
        ]
    }

    pub fn from_vector(v: &[T; 10]) -> Result<Self> {
        Self::bivariate(
            v[0],
            [v[1], v[2]],
            [v[3], v[4]],
            [[v[5], v[7]], [v[7], v[6]]],
            [v[8], v[9]],
        )
    }
}

/// Which submodel a calibration targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Wvag,
    Vag,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Wvag => "wvag",
            ModelKind::Vag => "vag",
        }
    }

    pub fn constraints(self) -> Constraints {
        Constraints {
            sigma12_zero: self == ModelKind::Vag,
            mu_zero: false,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wvag" => Ok(ModelKind::Wvag),
            "vag" => Ok(ModelKind::Vag),
            _ => Err(Error::InvalidInput(format!("unknown model {s:?} (expected wvag or vag)"))),
        }
    }
}

/// Parameter restrictions imposed during calibration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    /// Strong (VAG) model: `sigma_12 = 0`.
    pub sigma12_zero: bool,
    /// Self-decomposable submodel: `mu = 0`.
    pub mu_zero: bool,
}

impl Constraints {
    /// Number of parameters pinned relative to the unconstrained WVAG model.
    pub fn pinned(&self) -> usize {
        usize::from(self.sigma12_zero) + 2 * usize::from(self.mu_zero)
    }

    /// Projects `p` onto the constraint set.
    pub fn apply(&self, p: &WvagParams<f64>) -> Result<WvagParams<f64>> {
        let mut q = p.clone();
        if self.sigma12_zero {
            q = q.with_sigma_entry(0, 1, 0.0)?;
        }
        if self.mu_zero {
            q = q.with_mu(vec![0.0; q.dim()])?;
        }
        Ok(q)
    }
}
