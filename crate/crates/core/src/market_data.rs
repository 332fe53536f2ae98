//! Price ingestion, return construction and window/universe slicing.
//!
//! Panels are stored time-major: row `t` is one observation date, column `i`
//! one asset. All operations return new panels; nothing is mutated in place.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adjusted close prices, one column per asset.
#[derive(Debug, Clone)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    prices: DMatrix<f64>,
    sectors: Option<BTreeMap<String, String>>,
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != dates.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                actual: prices.nrows(),
            });
        }
        if prices.ncols() != assets.len() {
            return Err(Error::DimensionMismatch {
                expected: assets.len(),
                actual: prices.ncols(),
            });
        }
        if assets.is_empty() {
            return Err(Error::NoUsableAssets);
        }
        let unique: BTreeSet<&String> = assets.iter().collect();
        if unique.len() != assets.len() {
            return Err(Error::Parse("duplicate asset identifiers".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse("dates are not strictly increasing".into()));
        }
        for (j, asset) in assets.iter().enumerate() {
            for (t, date) in dates.iter().enumerate() {
                let value = prices[(t, j)];
                if !(value > 0.0) || !value.is_finite() {
                    return Err(Error::NonPositivePrice {
                        asset: asset.clone(),
                        date: date.to_string(),
                        value,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            prices,
            sectors: None,
        })
    }

    pub fn with_sectors(mut self, sectors: BTreeMap<String, String>) -> Self {
        self.sectors = Some(sectors);
        self
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn sectors(&self) -> Option<&BTreeMap<String, String>> {
        self.sectors.as_ref()
    }

    pub fn n_obs(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsvLayout {
    /// `date` column followed by one column per ticker.
    #[default]
    Wide,
    /// `date,ticker,close` rows.
    Long,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub layout: CsvLayout,
    /// Assets missing more than this fraction of observations are dropped.
    pub max_missing_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            layout: CsvLayout::Wide,
            max_missing_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedAsset {
    pub asset: String,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub dropped: Vec<DroppedAsset>,
    /// Cells filled by carrying the previous observation forward.
    pub forward_filled: usize,
    /// Leading gaps, filled with the first available observation.
    pub back_filled: usize,
}

/// Reads a price CSV, drops sparse assets and fills the remaining gaps.
pub fn load_prices(path: &Path, options: &LoadOptions) -> Result<(PricePanel, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let raw = match options.layout {
        CsvLayout::Wide => read_wide(&mut reader, path)?,
        CsvLayout::Long => read_long(&mut reader, path)?,
    };
    assemble(raw, options)
}

/// Reads an `asset,sector` metadata file.
pub fn load_sectors(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut sectors = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() < 2 {
            return Err(Error::Parse(format!(
                "{}: expected asset,sector",
                path.display()
            )));
        }
        sectors.insert(record[0].to_string(), record[1].to_string());
    }
    Ok(sectors)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

struct RawPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    /// Column-major cells, `None` = missing.
    columns: Vec<Vec<Option<f64>>>,
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| Error::Parse(format!("bad date {s:?}: {e}")))
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| Error::Parse(format!("bad price {s:?}: {e}")))
}

fn read_wide(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<RawPanel> {
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::Parse(format!(
            "{}: wide layout needs a leading `date` column and at least one ticker",
            path.display()
        )));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut columns = vec![Vec::new(); assets.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        dates.push(parse_date(&record[0])?);
        for (j, column) in columns.iter_mut().enumerate() {
            column.push(parse_cell(record.get(j + 1).unwrap_or(""))?);
        }
    }
    if dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parse(format!(
            "{}: dates are not strictly increasing",
            path.display()
        )));
    }
    Ok(RawPanel {
        dates,
        assets,
        columns,
    })
}

fn read_long(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<RawPanel> {
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("{}: missing `{name}` column", path.display())))
    };
    let (date_col, ticker_col, close_col) =
        (position("date")?, position("ticker")?, position("close")?);

    let mut cells: BTreeMap<(NaiveDate, String), Option<f64>> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    let mut tickers = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let date = parse_date(&record[date_col])?;
        let ticker = record[ticker_col].to_string();
        let value = parse_cell(&record[close_col])?;
        if cells.insert((date, ticker.clone()), value).is_some() {
            return Err(Error::Parse(format!(
                "duplicate row for {ticker} on {date}"
            )));
        }
        dates.insert(date);
        tickers.insert(ticker);
    }
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let assets: Vec<String> = tickers.into_iter().collect();
    let columns = assets
        .iter()
        .map(|a| {
            dates
                .iter()
                .map(|d| cells.get(&(*d, a.clone())).copied().flatten())
                .collect()
        })
        .collect();
    Ok(RawPanel {
        dates,
        assets,
        columns,
    })
}

fn assemble(raw: RawPanel, options: &LoadOptions) -> Result<(PricePanel, LoadReport)> {
    let n_obs = raw.dates.len();
    if n_obs == 0 {
        return Err(Error::NoUsableAssets);
    }
    let mut report = LoadReport::default();
    let mut kept_assets = Vec::new();
    let mut kept_columns = Vec::new();
    for (asset, mut column) in raw.assets.into_iter().zip(raw.columns) {
        let missing = column.iter().filter(|c| c.is_none()).count();
        let fraction = missing as f64 / n_obs as f64;
        if missing == n_obs || fraction > options.max_missing_fraction {
            report.dropped.push(DroppedAsset {
                asset,
                missing_fraction: fraction,
            });
            continue;
        }
        let first = column
            .iter()
            .flatten()
            .copied()
            .next()
            .expect("at least one observation");
        let mut last: Option<f64> = None;
        for cell in column.iter_mut() {
            match (*cell, last) {
                (Some(v), _) => last = Some(v),
                (None, Some(prev)) => {
                    *cell = Some(prev);
                    report.forward_filled += 1;
                }
                (None, None) => {
                    *cell = Some(first);
                    report.back_filled += 1;
                }
            }
        }
        kept_assets.push(asset);
        kept_columns.push(
            column
                .into_iter()
                .map(|c| c.expect("filled"))
                .collect::<Vec<_>>(),
        );
    }
    if kept_assets.is_empty() {
        return Err(Error::NoUsableAssets);
    }
    let prices = DMatrix::from_fn(n_obs, kept_assets.len(), |t, j| kept_columns[j][t]);
    let panel = PricePanel::new(raw.dates, kept_assets, prices)?;
    Ok((panel, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    #[default]
    Log,
    Simple,
}

/// Per-period returns, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    returns: DMatrix<f64>,
    standardized: bool,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() != dates.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                actual: returns.nrows(),
            });
        }
        if returns.ncols() != assets.len() {
            return Err(Error::DimensionMismatch {
                expected: assets.len(),
                actual: returns.ncols(),
            });
        }
        Ok(Self {
            dates,
            assets,
            returns,
            standardized: false,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn n_obs(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    /// Column means.
    pub fn means(&self) -> Vec<f64> {
        self.returns.column_iter().map(|c| c.mean()).collect()
    }

    /// Column sample standard deviations (divisor T - 1).
    pub fn std_devs(&self) -> Vec<f64> {
        self.returns
            .column_iter()
            .map(|c| sample_sd(c.as_slice()))
            .collect()
    }

    /// Sample covariance matrix with divisor T - 1.
    pub fn covariance(&self) -> DMatrix<f64> {
        let t = self.n_obs();
        let mut centered = self.returns.clone();
        for mut column in centered.column_iter_mut() {
            let mean = column.mean();
            column.add_scalar_mut(-mean);
        }
        let mut cov = centered.tr_mul(&centered) / (t as f64 - 1.0);
        symmetrize(&mut cov);
        cov
    }

    /// Rows in `range`, all assets.
    pub fn rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_obs() {
            return Err(Error::InvalidWindow {
                start: range.start as isize,
                end: range.end as isize,
                len: self.n_obs(),
            });
        }
        Ok(Self {
            dates: self.dates[range.clone()].to_vec(),
            assets: self.assets.clone(),
            returns: self.returns.rows(range.start, range.len()).into_owned(),
            standardized: false,
        })
    }

    /// Columns at `indices`, in the given order.
    pub fn select_assets(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_assets()) {
            return Err(Error::DimensionMismatch {
                expected: self.n_assets(),
                actual: bad + 1,
            });
        }
        Ok(Self {
            dates: self.dates.clone(),
            assets: indices.iter().map(|&i| self.assets[i].clone()).collect(),
            returns: self.returns.select_columns(indices),
            standardized: self.standardized,
        })
    }
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Log-returns `ln(p[t+1] / p[t])`.
pub fn to_log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    to_returns(panel, ReturnKind::Log)
}

pub fn to_returns(panel: &PricePanel, kind: ReturnKind) -> Result<ReturnPanel> {
    let t_raw = panel.n_obs();
    if t_raw < 2 {
        return Err(Error::InsufficientObservations {
            required: 2,
            actual: t_raw,
        });
    }
    let p = panel.prices();
    let returns = DMatrix::from_fn(t_raw - 1, panel.n_assets(), |t, i| {
        let ratio = p[(t + 1, i)] / p[(t, i)];
        match kind {
            ReturnKind::Log => ratio.ln(),
            ReturnKind::Simple => ratio - 1.0,
        }
    });
    ReturnPanel::new(
        panel.dates()[1..].to_vec(),
        panel.assets().to_vec(),
        returns,
    )
}

/// Z-scores every column. Zero-variance columns are set to zero and their
/// indices returned alongside the panel.
pub fn standardize(rp: &ReturnPanel) -> Result<(ReturnPanel, Vec<usize>)> {
    let t = rp.n_obs();
    if t < 2 {
        return Err(Error::InsufficientObservations {
            required: 2,
            actual: t,
        });
    }
    let mut returns = rp.returns.clone();
    let mut flagged = Vec::new();
    for (i, mut column) in returns.column_iter_mut().enumerate() {
        let mean = column.mean();
        column.add_scalar_mut(-mean);
        let sd = (column.norm_squared() / (t as f64 - 1.0)).sqrt();
        let scale = column.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if sd == 0.0 || sd <= 1e-14 * scale || !sd.is_finite() {
            column.fill(0.0);
            flagged.push(i);
        } else {
            column /= sd;
        }
    }
    let out = ReturnPanel {
        dates: rp.dates.clone(),
        assets: rp.assets.clone(),
        returns,
        standardized: true,
    };
    Ok((out, flagged))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WindowMode {
    /// `[t0 - delta, t0)`.
    InSample,
    /// `[t0, t0 + delta)`.
    OutOfSample,
    /// Windows of `length` every `step` observations inside `[t0 - delta, t0 + delta)`.
    Rolling { length: usize, step: usize },
}

/// Observation range around a split index `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t0: usize,
    pub delta: usize,
    pub mode: WindowMode,
}

impl WindowSpec {
    pub fn in_sample(t0: usize, delta: usize) -> Self {
        Self {
            t0,
            delta,
            mode: WindowMode::InSample,
        }
    }

    pub fn out_of_sample(t0: usize, delta: usize) -> Self {
        Self {
            t0,
            delta,
            mode: WindowMode::OutOfSample,
        }
    }

    pub fn rolling(t0: usize, delta: usize, length: usize, step: usize) -> Self {
        Self {
            t0,
            delta,
            mode: WindowMode::Rolling { length, step },
        }
    }

    /// Split at the first observation dated on or after `date`.
    pub fn at_date(
        rp: &ReturnPanel,
        date: NaiveDate,
        delta: usize,
        mode: WindowMode,
    ) -> Result<Self> {
        let t0 = rp.dates().iter().position(|d| *d >= date).ok_or_else(|| {
            Error::InvalidArgument(format!("split date {date} is after the last observation"))
        })?;
        Ok(Self { t0, delta, mode })
    }

    /// Observation ranges covered by this spec for a panel of `len` rows.
    pub fn ranges(&self, len: usize) -> Result<Vec<Range<usize>>> {
        let start = self.t0 as isize - self.delta as isize;
        let end = (self.t0 + self.delta) as isize;
        let invalid = |s: isize, e: isize| Error::InvalidWindow {
            start: s,
            end: e,
            len,
        };
        match self.mode {
            WindowMode::InSample => {
                if self.delta == 0 || start < 0 || self.t0 > len {
                    return Err(invalid(start, self.t0 as isize));
                }
                Ok(vec![start as usize..self.t0])
            }
            WindowMode::OutOfSample => {
                if self.delta == 0 || end as usize > len {
                    return Err(invalid(self.t0 as isize, end));
                }
                Ok(vec![self.t0..end as usize])
            }
            WindowMode::Rolling { length, step } => {
                if self.delta == 0 || start < 0 || end as usize > len || length == 0 || step == 0 {
                    return Err(invalid(start, end));
                }
                let ranges = rolling_ranges(start as usize, end as usize, length, step);
                if ranges.is_empty() {
                    return Err(invalid(start, end));
                }
                Ok(ranges)
            }
        }
    }
}

/// Windows of `length` starting every `step` rows inside `[start, end)`.
pub fn rolling_ranges(start: usize, end: usize, length: usize, step: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    if length == 0 || step == 0 {
        return out;
    }
    let mut s = start;
    while s + length <= end {
        out.push(s..s + length);
        s += step;
    }
    out
}

/// Restricts `rp` to the spec's range(s). In-/out-of-sample modes yield one panel.
pub fn slice_window(rp: &ReturnPanel, spec: &WindowSpec) -> Result<Vec<ReturnPanel>> {
    spec.ranges(rp.n_obs())?
        .into_iter()
        .map(|r| rp.rows(r))
        .collect()
}

/// Sorted asset index sets, `size` distinct indices per draw.
pub fn subsample_indices(
    n: usize,
    size: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if size > n {
        return Err(Error::SubsampleTooLarge { size, available: n });
    }
    if size == 0 {
        return Err(Error::InvalidArgument(
            "subsample size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..draws)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

pub fn subsample_assets(
    rp: &ReturnPanel,
    size: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<ReturnPanel>> {
    subsample_indices(rp.n_assets(), size, draws, seed)?
        .iter()
        .map(|idx| rp.select_assets(idx))
        .collect()
}

/// Business-day calendar starting 2000-01-03, used for synthetic panels.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    use chrono::{Datelike, Weekday};
    let mut day = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day = day.succ_opt().expect("date in range");
    }
    out
}

/// Rebuilds a price panel from log-returns, starting every asset at `base`.
pub fn prices_from_log_returns(
    rp: &ReturnPanel,
    base: f64,
    first_date: NaiveDate,
) -> Result<PricePanel> {
    let t = rp.n_obs();
    let n = rp.n_assets();
    let mut prices = DMatrix::zeros(t + 1, n);
    for i in 0..n {
        let mut level = base;
        prices[(0, i)] = level;
        for s in 0..t {
            level *= rp.returns()[(s, i)].exp();
            prices[(s + 1, i)] = level;
        }
    }
    let mut dates = Vec::with_capacity(t + 1);
    dates.push(first_date);
    dates.extend_from_slice(rp.dates());
    PricePanel::new(dates, rp.assets().to_vec(), prices)
}

/// Index lookup for asset identifiers.
pub fn asset_index(assets: &[String]) -> HashMap<&str, usize> {
    assets
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect()
}
