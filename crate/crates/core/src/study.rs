//! Monte Carlo calibration studies: repeated simulation from a known
//! parameter set, fitted by each method.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::charfn::fourier_invertible;
use crate::dme::QuantileSpec;
use crate::error::{Error, Result};
use crate::fit::{estimate, FitConfig, Method};
use crate::gof::{gof_report, GofConfig};
use crate::model::{ModelKind, WvagParams, PARAM_NAMES};
use crate::simulate::{simulate_sample, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub truth: WvagParams<f64>,
    pub c: f64,
    #[serde(rename = "N")]
    pub n_obs: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub model: ModelKind,
    pub seed: u64,
    pub fit: FitConfig,
    /// Compute `-ln L` and chi-squared even when the truth fails the
    /// integrability condition at `c`.
    pub density_stats_when_not_invertible: bool,
}

/// The simulation design with `a = 1`, `alpha = (0.8, 0.6)`,
/// `mu = (0.1, -0.3)`, `Sigma = [[1, 0.6], [0.6, 1.2]]`, `m = (-0.1, 0.3)`.
pub fn reference_truth() -> WvagParams<f64> {
    WvagParams::bivariate(1.0, [0.8, 0.6], [0.1, -0.3], [[1.0, 0.6], [0.6, 1.2]], [-0.1, 0.3]).expect("feasible")
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            truth: reference_truth(),
            c: 1.0,
            n_obs: 1000,
            reps: 100,
            methods: Method::ALL.to_vec(),
            model: ModelKind::Wvag,
            seed: 1,
            fit: FitConfig::default(),
            density_stats_when_not_invertible: false,
        }
    }
}

impl StudyConfig {
    /// Whether `-ln L` and chi-squared are reported.
    pub fn density_stats(&self) -> bool {
        self.density_stats_when_not_invertible || fourier_invertible(&self.truth, self.c).invertible
    }
}

/// Outcome of one method on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub method: Method,
    pub estimates: Option<[f64; 10]>,
    pub neg_log_likelihood: Option<f64>,
    pub chi2: Option<f64>,
    pub ks: Option<f64>,
    pub error: Option<String>,
}

/// Per-method aggregate over successful replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub label: String,
    pub mean: [f64; 10],
    pub rmse: [f64; 10],
    pub mean_neg_log_likelihood: Option<f64>,
    pub mean_chi2: Option<f64>,
    pub mean_ks: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub truth: WvagParams<f64>,
    pub c: f64,
    pub density_stats: bool,
    pub reps: Vec<RepResult>,
    pub summaries: Vec<MethodSummary>,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(label: &str, method: Method, truth: &[f64; 10], reps: &[RepResult]) -> MethodSummary {
    let ok: Vec<&RepResult> = reps.iter().filter(|r| r.method == method && r.estimates.is_some()).collect();
    let failures = reps.iter().filter(|r| r.method == method).count() - ok.len();
    let k = ok.len().max(1) as f64;
    let mut mean = [f64::NAN; 10];
    let mut rmse = [f64::NAN; 10];
    if !ok.is_empty() {
        for j in 0..10 {
            mean[j] = ok.iter().map(|r| r.estimates.unwrap()[j]).sum::<f64>() / k;
            rmse[j] = (ok.iter().map(|r| (r.estimates.unwrap()[j] - truth[j]).powi(2)).sum::<f64>() / k).sqrt();
        }
    }
    MethodSummary {
        method,
        label: label.to_string(),
        mean,
        rmse,
        mean_neg_log_likelihood: mean_of(ok.iter().filter_map(|r| r.neg_log_likelihood)),
        mean_chi2: mean_of(ok.iter().filter_map(|r| r.chi2)),
        mean_ks: mean_of(ok.iter().filter_map(|r| r.ks)),
        successes: ok.len(),
        failures,
    }
}

/// Replication `r` draws its sample from substream `r` of the seed and
/// hands substream 1 of that to every method, so methods see the same data
/// and the same auxiliary random numbers.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    if cfg.reps == 0 || cfg.methods.is_empty() {
        return Err(Error::InvalidInput("a study needs at least one replication and one method".into()));
    }
    let fit_cfg = cfg.fit.resolved();
    let density_stats = cfg.density_stats();
    let gof_cfg = GofConfig { override_invertibility: fit_cfg.gof.override_invertibility || density_stats, ..fit_cfg.gof };
    let root = RngStream::new(cfg.seed);
    let mut reps = Vec::new();
    for r in 0..cfg.reps {
        let stream = root.substream(r as u64);
        let sample = simulate_sample(&cfg.truth, cfg.c, cfg.n_obs, stream)?;
        for &method in &cfg.methods {
            let aux = stream.substream(1);
            let mut rec = RepResult { rep: r, method, estimates: None, neg_log_likelihood: None, chi2: None, ks: None, error: None };
            match estimate(&sample, cfg.model, method, &fit_cfg, aux) {
                Ok(e) => {
                    rec.estimates = Some(e.params.to_vector());
                    let g = if density_stats { gof_cfg } else { GofConfig { override_invertibility: false, ..gof_cfg } };
                    match gof_report(&e.params, &sample, &g, aux.substream(2)) {
                        Ok(rep) => {
                            if density_stats {
                                rec.neg_log_likelihood = rep.neg_log_likelihood.value().copied();
                                rec.chi2 = rep.chi2.value().map(|c| c.statistic);
                            }
                            rec.ks = Some(rep.ks);
                        }
                        Err(e) => rec.error = Some(format!("diagnostics: {e}")),
                    }
                }
                Err(e) => {
                    log::warn!("replication {r}, {}: {e}", method.name());
                    rec.error = Some(e.to_string());
                }
            }
            log::info!("replication {r} {} done", method.name());
            reps.push(rec);
        }
    }
    let truth = cfg.truth.to_vector();
    let summaries = cfg.methods.iter().map(|&m| summarize(&m.name().to_ascii_uppercase(), m, &truth, &reps)).collect();
    Ok(StudyResult { truth: cfg.truth.clone(), c: cfg.c, density_stats, reps, summaries })
}

/// DME under each quantile set, on identical samples.
pub fn quantile_study(cfg: &StudyConfig, specs: &[(String, QuantileSpec)]) -> Result<StudyResult> {
    let mut out: Option<StudyResult> = None;
    for (label, q) in specs {
        let mut c = cfg.clone();
        c.methods = vec![Method::Dme];
        c.fit.dme.quantiles = q.clone();
        let mut r = run_study(&c)?;
        r.summaries[0].label = label.clone();
        match out.as_mut() {
            None => out = Some(r),
            Some(o) => {
                o.reps.extend(r.reps);
                o.summaries.extend(r.summaries);
            }
        }
    }
    out.ok_or_else(|| Error::InvalidInput("no quantile sets given".into()))
}

/// Presets `q1` to `q4` with their names.
pub fn standard_quantile_sets() -> Vec<(String, QuantileSpec)> {
    ["q1", "q2", "q3", "q4"].iter().map(|n| (n.to_string(), QuantileSpec::preset(n).unwrap())).collect()
}

fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => String::new(),
    }
}

/// Table with one row per parameter (true value, then mean and RMSE per
/// method) followed by the mean fit statistics. `-ln L` and chi-squared
/// rows are omitted when the study did not compute them.
pub fn table_csv(res: &StudyResult) -> String {
    let truth = res.truth.to_vector();
    let mut s = String::from("parameter,true");
    for m in &res.summaries {
        let _ = write!(s, ",{0}_mean,{0}_rmse", m.label);
    }
    s.push('\n');
    for (j, name) in PARAM_NAMES.iter().enumerate() {
        let _ = write!(s, "{name},{}", cell(Some(truth[j])));
        for m in &res.summaries {
            let _ = write!(s, ",{},{}", cell(Some(m.mean[j])), cell(Some(m.rmse[j])));
        }
        s.push('\n');
    }
    let mut stat_row = |label: &str, f: &dyn Fn(&MethodSummary) -> Option<f64>| {
        let _ = write!(s, "{label},");
        for m in &res.summaries {
            let _ = write!(s, ",{},", cell(f(m)));
        }
        s.push('\n');
    };
    if res.density_stats {
        stat_row("neg_log_likelihood", &|m| m.mean_neg_log_likelihood);
        stat_row("chi2", &|m| m.mean_chi2);
    }
    stat_row("ks", &|m| m.mean_ks);
    s
}
