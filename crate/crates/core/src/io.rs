//! File formats: price series, return samples, atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WvagParams;
use crate::simulate::{simulate_sample, ReturnSample, RngStream};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = dir.join(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub price: [Option<f64>; 2],
}

/// Parsed `date,price1,price2` file.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub rows: Vec<PriceRow>,
}

fn parse_price(field: &str, line: usize) -> Result<Option<f64>> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") || f == "." {
        return Ok(None);
    }
    let v: f64 = f.parse().map_err(|_| Error::Parse { line, msg: format!("bad price {f:?}") })?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("price must be positive, got {v}") });
    }
    Ok(Some(v))
}

impl PriceSeries {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => break (i + 1, l),
                None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
            }
        };
        let cols: Vec<String> = header.1.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
        if cols != ["date", "price1", "price2"] {
            return Err(Error::Parse {
                line: header.0,
                msg: format!("expected header date,price1,price2, got {:?}", header.1),
            });
        }
        let mut rows: Vec<PriceRow> = Vec::new();
        for (i, l) in lines {
            let line = i + 1;
            if l.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse { line, msg: format!("expected 3 fields, got {}", fields.len()) });
            }
            let date = NaiveDate::parse_from_str(fields[0].trim(), "%Y-%m-%d")
                .map_err(|e| Error::Parse { line, msg: format!("bad date {:?}: {e}", fields[0]) })?;
            if let Some(prev) = rows.last() {
                if date <= prev.date {
                    return Err(Error::Parse { line, msg: format!("date {date} is not after {}", prev.date) });
                }
            }
            rows.push(PriceRow {
                date,
                price: [parse_price(fields[1], line)?, parse_price(fields[2], line)?],
            });
        }
        Ok(PriceSeries { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        PriceSeries::parse(&fs::read_to_string(path)?)
    }

    /// Log returns between consecutive rows where both prices are present.
    /// Returns the sample and the number of rows dropped for missing prices.
    pub fn log_returns(&self, c: f64) -> Result<(ReturnSample, usize)> {
        let complete: Vec<[f64; 2]> = self
            .rows
            .iter()
            .filter_map(|r| match r.price {
                [Some(a), Some(b)] => Some([a, b]),
                _ => None,
            })
            .collect();
        let dropped = self.rows.len() - complete.len();
        if complete.len() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 complete price rows, got {}", complete.len())));
        }
        let obs = complete
            .windows(2)
            .map(|w| [(w[1][0] / w[0][0]).ln(), (w[1][1] / w[0][1]).ln()])
            .collect();
        Ok((ReturnSample::new(c, obs)?, dropped))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("date,price1,price2\n");
        for r in &self.rows {
            let f = |p: Option<f64>| p.map(|v| format!("{v:.4}")).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.date.format("%Y-%m-%d"), f(r.price[0]), f(r.price[1])));
        }
        s
    }
}

/// Metadata written next to a return-sample CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub c: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: Option<u64>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

impl ReturnSample {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y1,y2\n");
        for y in &self.obs {
            s.push_str(&format!("{},{}\n", y[0], y[1]));
        }
        s
    }

    pub fn parse_csv(text: &str, c: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim().eq_ignore_ascii_case("y1,y2") => {}
            Some((i, h)) => return Err(Error::Parse { line: i + 1, msg: format!("expected header y1,y2, got {h:?}") }),
            None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
        }
        let mut obs = Vec::new();
        for (i, l) in lines {
            let mut it = l.split(',');
            let mut next = || -> Result<f64> {
                let f = it.next().ok_or(Error::Parse { line: i + 1, msg: "missing field".into() })?;
                let v: f64 = f.trim().parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad number {f:?}") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line: i + 1, msg: "non-finite value".into() });
                }
                Ok(v)
            };
            let y = [next()?, next()?];
            obs.push(y);
        }
        ReturnSample::new(c, obs)
    }

    /// Writes the CSV and its JSON sidecar.
    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())?;
        let meta = SampleMeta { c: self.c, n: self.obs.len(), seed };
        write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
    }

    /// Reads a sample; `c` defaults to the sidecar value, then to 1.
    pub fn load(path: &Path, c: Option<f64>) -> Result<Self> {
        let side = sidecar_path(path);
        let c = match c {
            Some(c) => c,
            None if side.exists() => serde_json::from_str::<SampleMeta>(&fs::read_to_string(side)?)?.c,
            None => 1.0,
        };
        ReturnSample::parse_csv(&fs::read_to_string(path)?, c)
    }
}

/// Daily parameters of the synthetic index-pair fixture, set to the
/// digital-moment WVAG estimates reported for a pair of equity indices.
pub fn fixture_params() -> WvagParams<f64> {
    WvagParams::bivariate(
        0.899,
        [0.898, 0.878],
        [-0.562e-3, -1.166e-3],
        [[0.928e-4, 0.844e-4], [0.844e-4, 1.051e-4]],
        [0.982e-3, 1.066e-3],
    )
    .expect("fixture parameters are feasible")
}

/// First date of the synthetic fixture.
pub const FIXTURE_START: (i32, u32, u32) = (2011, 2, 14);

/// The shipped fixture: `n_prices` business days of [`fixture_params`]
/// returns from [`FIXTURE_START`].
pub fn fixture_prices(n_prices: usize, seed: u64) -> Result<PriceSeries> {
    let (y, m, d) = FIXTURE_START;
    let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    synthetic_prices(&fixture_params(), start, n_prices, [1329.15, 6037.10], RngStream::new(seed))
}

/// `n_prices` business-day closes from `start`, driven by daily increments
/// of `p` (c = 1).
pub fn synthetic_prices(p: &WvagParams<f64>, start: NaiveDate, n_prices: usize, s0: [f64; 2], stream: RngStream) -> Result<PriceSeries> {
    if n_prices < 2 {
        return Err(Error::InvalidInput("need at least two prices".into()));
    }
    let returns = simulate_sample(p, 1.0, n_prices - 1, stream)?;
    let mut date = start;
    let mut price = s0;
    let mut rows = Vec::with_capacity(n_prices);
    for j in 0..n_prices {
        while matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            date = date.succ_opt().expect("date in range");
        }
        if j > 0 {
            let y = returns.obs[j - 1];
            price = [price[0] * y[0].exp(), price[1] * y[1].exp()];
        }
        rows.push(PriceRow { date, price: [Some(price[0]), Some(price[1])] });
        date = date.succ_opt().expect("date in range");
    }
    Ok(PriceSeries { rows })
}
