use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wvag::charfn::fourier_invertible;
use wvag::dme::save_surface_csv;
use wvag::fit::{fit_report, FitConfig, Method};
use wvag::gof::likelihood_ratio_test;
use wvag::inversion::{joint_density, marginal_law, GridSpec, InversionOptions};
use wvag::io::{fixture_prices, write_atomic, PriceSeries};
use wvag::simulate::{simulate_sample, ReturnSample, RngStream};
use wvag::study::{quantile_study, run_study, standard_quantile_sets, table_csv, StudyConfig};
use wvag::{Constraints, ModelKind, Params};

/// Exit status for malformed input.
const EXIT_INPUT: u8 = 2;
/// Exit status for numerical failure.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "wvag", version, about = "Calibrate and diagnose bivariate variance-alpha-gamma models")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a date,price1,price2 file into log returns.
    Ingest(IngestArgs),
    /// Simulate log returns from a parameter file.
    Simulate(SimulateArgs),
    /// Calibrate a model to a return sample and report diagnostics.
    Fit(FitArgs),
    /// Repeated simulation and calibration from known parameters.
    Study(StudyArgs),
    /// Likelihood-ratio test of a parameter restriction.
    Lrt(LrtArgs),
    /// Tabulate the joint density for contour plots.
    Density(DensityArgs),
    /// Write the synthetic five-year price fixture.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Price CSV with header date,price1,price2.
    input: PathBuf,
    /// Sampling interval of the rows.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Parameter JSON; defaults to the reference simulation design.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long = "N", default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Return CSV (y1,y2); the sampling interval comes from --c, the JSON
    /// sidecar, or defaults to 1.
    input: PathBuf,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value = "wvag")]
    model: ModelKind,
    #[arg(long, default_value = "mle")]
    method: Method,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    override_invertibility: bool,
    /// Bootstrap replicates for standard errors.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the DME error surface (a,rho,raw,smoothed) here.
    #[arg(long)]
    surface: Option<PathBuf>,
    /// Record wall-clock runtime in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct StudyArgs {
    /// Parameter JSON for the truth; defaults to the reference design.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Study JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    override_invertibility: bool,
    /// Compare DME under the quantile sets q1 to q4 instead of methods.
    #[arg(long)]
    quantile_study: bool,
    /// Table CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replication results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NullHypothesis {
    /// Sigma_12 = 0 (the strong VAG model).
    Sigma12,
    /// mu = 0 (self-decomposable returns).
    Mu,
}

#[derive(Args)]
struct LrtArgs {
    input: PathBuf,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, value_enum)]
    null: NullHypothesis,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    override_invertibility: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    params: PathBuf,
    /// Time horizon of the increment.
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Box lo1,lo2,hi1,hi2; defaults to eight standard deviations around
    /// the mean.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    r#box: Option<Vec<f64>>,
    /// Nodes per axis (power of two).
    #[arg(long, default_value_t = 256)]
    res: usize,
    #[arg(long)]
    override_invertibility: bool,
    /// Return sample to copy alongside as a scatter overlay.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 20110214)]
    seed: u64,
    #[arg(long, default_value_t = 1260)]
    days: usize,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(wvag::Error::from).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(wvag::Error::from).with_context(|| format!("parsing {}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Writes to `path` atomically, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_sample(path: &Path, c: Option<f64>) -> Result<ReturnSample> {
    ReturnSample::load(path, c).with_context(|| format!("loading {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let series = PriceSeries::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (sample, dropped) = series.log_returns(a.c)?;
    if dropped > 0 {
        eprintln!("warning: {dropped} rows with missing prices dropped");
    }
    sample.save(&a.out, None)?;
    eprintln!("{} price rows, {} return pairs", series.rows.len(), sample.len());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let p: Params = match &a.params {
        Some(path) => read_json(path)?,
        None => wvag::study::reference_truth(),
    };
    let s = simulate_sample(&p, a.c, a.n, RngStream::new(a.seed))?;
    s.save(&a.out, Some(a.seed))?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let sample = load_sample(&a.input, a.c)?;
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if a.override_invertibility {
        cfg.override_invertibility = true;
    }
    if let Some(b) = a.bootstrap {
        cfg.bootstrap = b;
    }
    warn_if_overriding(&cfg, &sample);
    let start = Instant::now();
    let mut report = fit_report(&sample, a.model, a.method, &cfg, a.seed)?;
    if a.timing {
        report.runtime_seconds = Some(start.elapsed().as_secs_f64());
    }
    if let Some(path) = &a.surface {
        match &report.surface {
            Some(s) => save_surface_csv(s, path)?,
            None => bail!(wvag::Error::InvalidInput("--surface needs --method dme".into())),
        }
    }
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn warn_if_overriding(cfg: &FitConfig, sample: &ReturnSample) {
    if cfg.override_invertibility {
        eprintln!(
            "warning: invertibility override enabled at c = {}; densities may be inaccurate where the integrability condition fails",
            sample.c
        );
    }
}

fn study(a: StudyArgs) -> Result<()> {
    let mut cfg: StudyConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => StudyConfig::default(),
    };
    if let Some(t) = &a.truth {
        cfg.truth = read_json(t)?;
    }
    if let Some(c) = a.c {
        cfg.c = c;
    }
    if let Some(n) = a.n {
        cfg.n_obs = n;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.override_invertibility {
        cfg.fit.override_invertibility = true;
    }
    let res = if a.quantile_study { quantile_study(&cfg, &standard_quantile_sets())? } else { run_study(&cfg)? };
    if let Some(p) = &a.json {
        write_atomic(p, to_json(&res)?.as_bytes())?;
    }
    emit(a.out.as_deref(), &table_csv(&res))
}

#[derive(Serialize)]
struct LrtReport {
    null: &'static str,
    c: f64,
    #[serde(rename = "N")]
    n_obs: usize,
    d: f64,
    df: usize,
    p_value: f64,
    reject_at_5pct: bool,
    ln_l_null: f64,
    ln_l_alt: f64,
    null_estimates: Params,
    alt_estimates: Params,
    resolution: usize,
    data_sha256: String,
}

fn lrt(a: LrtArgs) -> Result<()> {
    let sample = load_sample(&a.input, a.c)?;
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if a.override_invertibility {
        cfg.override_invertibility = true;
    }
    warn_if_overriding(&cfg, &sample);
    let (name, null) = match a.null {
        NullHypothesis::Sigma12 => ("sigma12", ModelKind::Vag.constraints()),
        NullHypothesis::Mu => ("mu", Constraints { sigma12_zero: false, mu_zero: true }),
    };
    let r = likelihood_ratio_test(&sample, null, Constraints::default(), &cfg.resolved().mle)?;
    let report = LrtReport {
        null: name,
        c: sample.c,
        n_obs: sample.len(),
        d: r.d,
        df: r.df,
        p_value: r.p_value,
        reject_at_5pct: r.rejects(0.05),
        ln_l_null: r.ln_l_null,
        ln_l_alt: r.ln_l_alt,
        null_estimates: r.null_params,
        alt_estimates: r.alt_params,
        resolution: r.resolution,
        data_sha256: wvag::fit::data_hash(&sample),
    };
    emit(a.out.as_deref(), &to_json(&report)?)
}

#[derive(Serialize)]
struct DensityMeta {
    t: f64,
    grid: GridSpec,
    integral: f64,
    clipped_mass: f64,
    min_raw: f64,
    tail_mass_bound: f64,
    truncation_level: f64,
    invertibility_margin: f64,
    overridden: bool,
    rescaled: bool,
}

fn density(a: DensityArgs) -> Result<()> {
    let p: Params = read_json(&a.params)?;
    let inv = fourier_invertible(&p, a.t);
    if !inv.invertible && a.override_invertibility {
        eprintln!(
            "warning: integrability condition fails at t = {} (margin {:.6} <= 0.5); inverting anyway",
            a.t, inv.margin
        );
    }
    let spec = match &a.r#box {
        Some(b) => GridSpec::square([b[0], b[1]], [b[2], b[3]], a.res)?,
        None => {
            let mut lo = [0.0; 2];
            let mut hi = [0.0; 2];
            for k in 0..2 {
                let law = marginal_law(&p, k, a.t)?;
                let sd = law.variance().sqrt();
                lo[k] = law.mean() - 8.0 * sd;
                hi[k] = law.mean() + 8.0 * sd;
            }
            GridSpec::square(lo, hi, a.res)?
        }
    };
    let grid = joint_density(&p, a.t, &spec, InversionOptions { override_invertibility: a.override_invertibility })?;
    grid.save_csv(&a.out)?;
    let meta = DensityMeta {
        t: a.t,
        grid: spec,
        integral: grid.integral,
        clipped_mass: grid.clipped_mass,
        min_raw: grid.min_raw,
        tail_mass_bound: grid.tail_mass_bound,
        truncation_level: grid.truncation_level,
        invertibility_margin: grid.margin,
        overridden: grid.overridden,
        rescaled: grid.rescaled,
    };
    write_atomic(&a.out.with_extension("json"), to_json(&meta)?.as_bytes())?;
    if let Some(s) = &a.sample {
        let sample = load_sample(s, Some(a.t))?;
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("density");
        write_atomic(&a.out.with_file_name(format!("{stem}_scatter.csv")), sample.to_csv().as_bytes())?;
    }
    Ok(())
}

fn fixture(a: FixtureArgs) -> Result<()> {
    let series = fixture_prices(a.days, a.seed)?;
    write_atomic(&a.out, series.to_csv().as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Ingest(a) => ingest(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Study(a) => study(a),
        Command::Lrt(a) => lrt(a),
        Command::Density(a) => density(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<wvag::Error>() {
        Some(w) if w.is_input_error() => EXIT_INPUT,
        Some(_) => EXIT_NUMERICAL,
        None => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
