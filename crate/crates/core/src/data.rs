//! Shared domain types and their CSV representation.
//!
//! Timestamps are held as epoch seconds (UTC) in memory and written as
//! ISO-8601 strings. Missing values are explicit: a series carries a mask,
//! and an ensemble row with any missing member is missing as a whole.

use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

/// Default cadence: one hour.
pub const HOUR: i64 = 3600;

pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(t: i64) -> String {
    DateTime::<Utc>::from_timestamp(t, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}

/// Hourly timestamps starting at 2024-01-01T00:00:00Z.
pub fn hourly_timestamps(n: usize) -> Vec<i64> {
    const START: i64 = 1_704_067_200;
    (0..n as i64).map(|i| START + i * HOUR).collect()
}

fn check_increasing(ts: &[i64]) -> Result<()> {
    match ts.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(Error::Ordering { row: i + 1 }),
        None => Ok(()),
    }
}

/// Strictly increasing probabilities in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::QuantileLevels("no quantile levels".into()));
        }
        if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::QuantileLevels(format!("{t} is outside (0, 1)")));
        }
        if let Some(w) = taus.windows(2).find(|w| w[1] <= w[0]) {
            let what = if w[1] == w[0] { "duplicate" } else { "unsorted" };
            return Err(Error::QuantileLevels(format!("{what} level {}", w[1])));
        }
        Ok(Self(taus))
    }

    /// `{step, 2·step, ..., 1 − step}` rounded to 1e-12, e.g. `grid(0.05)` is the
    /// 19-level grid 0.05..0.95.
    pub fn grid(step: f64) -> Result<Self> {
        let n = (1.0 / step).round() as usize;
        let taus = (1..n).map(|i| ((i as f64 * step) * 1e12).round() / 1e12).collect();
        Self::new(taus)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, tau: f64) -> Option<usize> {
        self.0.iter().position(|t| (t - tau).abs() < 1e-12)
    }

    pub fn label(tau: f64, precision: usize) -> String {
        format!("q_{tau:.precision$}")
    }
}

/// Target series aligned to timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries<T = f64> {
    timestamps: Vec<i64>,
    values: Vec<T>,
    missing: Vec<bool>,
}

impl<T: Real> ObservationSeries<T> {
    /// Non-finite values are flagged missing.
    pub fn new(timestamps: Vec<i64>, values: Vec<T>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Arity(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        check_increasing(&timestamps)?;
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        Ok(Self {
            timestamps,
            values,
            missing,
        })
    }

    pub fn hourly(values: Vec<T>) -> Self {
        Self::new(hourly_timestamps(values.len()), values).expect("hourly stamps are increasing")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.missing[i]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            missing: idx.iter().map(|&i| self.missing[i]).collect(),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
            missing: self.missing[start..end].to_vec(),
        }
    }
}

/// T×M matrix of scenario values aligned to a set of timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMatrix<T = f64> {
    values: Matrix<T>,
    member_labels: Vec<String>,
    timestamps: Vec<i64>,
    missing: Vec<bool>,
}

impl<T: Real> EnsembleMatrix<T> {
    /// A row with any non-finite entry is flagged missing as a whole.
    pub fn new(values: Matrix<T>, member_labels: Vec<String>, timestamps: Vec<i64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Arity("ensemble has no members".into()));
        }
        if member_labels.len() != values.ncols() {
            return Err(Error::Arity(format!(
                "{} labels for {} members",
                member_labels.len(),
                values.ncols()
            )));
        }
        if timestamps.len() != values.nrows() {
            return Err(Error::Arity(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        check_increasing(&timestamps)?;
        let missing = values.rows_iter().map(|r| r.iter().any(|v| !v.is_finite())).collect();
        Ok(Self {
            values,
            member_labels,
            timestamps,
            missing,
        })
    }

    /// Labels `ens_0..ens_{M-1}`.
    pub fn with_default_labels(values: Matrix<T>, timestamps: Vec<i64>) -> Result<Self> {
        let labels = (0..values.ncols()).map(|j| format!("ens_{j}")).collect();
        Self::new(values, labels, timestamps)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_members(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn member_labels(&self) -> &[String] {
        &self.member_labels
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.missing[i]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            member_labels: self.member_labels.clone(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            missing: idx.iter().map(|&i| self.missing[i]).collect(),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.slice_rows(start, end),
            member_labels: self.member_labels.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            missing: self.missing[start..end].to_vec(),
        }
    }
}

/// T'×Q matrix of quantile forecasts, one column per level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecastMatrix<T = f64> {
    values: Matrix<T>,
    taus: QuantileLevels,
    timestamps: Vec<i64>,
}

impl<T: Real> QuantileForecastMatrix<T> {
    pub fn new(values: Matrix<T>, taus: QuantileLevels, timestamps: Vec<i64>) -> Result<Self> {
        if values.ncols() != taus.len() {
            return Err(Error::Arity(format!(
                "{} columns for {} quantile levels",
                values.ncols(),
                taus.len()
            )));
        }
        if timestamps.len() != values.nrows() {
            return Err(Error::Arity(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        check_increasing(&timestamps)?;
        Ok(Self {
            values,
            taus,
            timestamps,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn taus(&self) -> &QuantileLevels {
        &self.taus
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn column_for(&self, tau: f64) -> Option<Vec<T>> {
        self.taus.position(tau).map(|j| self.values.column(j))
    }

    pub fn row_is_missing(&self, i: usize) -> bool {
        self.values.row(i).iter().any(|v| !v.is_finite())
    }

    /// Sorts every row ascending, which removes quantile crossing.
    pub fn sort_rows(&mut self) {
        for i in 0..self.values.nrows() {
            sort_ascending(self.values.row_mut(i));
        }
    }

    /// Number of adjacent-column pairs that decrease, over all complete rows.
    pub fn crossing_count(&self) -> usize {
        self.values
            .rows_iter()
            .map(|r| r.windows(2).filter(|w| w[1] < w[0]).count())
            .sum()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            taus: self.taus.clone(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
        }
    }

    /// Views the forecast as an ensemble with one member per level.
    pub fn as_ensemble(&self, precision: usize) -> Result<EnsembleMatrix<T>> {
        let labels = self
            .taus
            .as_slice()
            .iter()
            .map(|&t| QuantileLevels::label(t, precision))
            .collect();
        EnsembleMatrix::new(self.values.clone(), labels, self.timestamps.clone())
    }
}

/// Sorts ascending with NaNs last.
pub fn sort_ascending<T: Real>(row: &mut [T]) {
    row.sort_by(|a, b| a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan())));
}

/// Result of [`clean_nans`].
#[derive(Debug, Clone)]
pub struct Cleaned<T = f64> {
    pub obs: ObservationSeries<T>,
    pub forecast: QuantileForecastMatrix<T>,
    /// Surviving row positions in the inputs.
    pub kept: Vec<usize>,
    pub dropped: usize,
}

/// Drops every row where the observation or any forecast entry is missing.
pub fn clean_nans<T: Real>(obs: &ObservationSeries<T>, qf: &QuantileForecastMatrix<T>) -> Result<Cleaned<T>> {
    if obs.timestamps() != qf.timestamps() {
        return Err(Error::Arity("observations and forecasts are not aligned".into()));
    }
    let kept: Vec<usize> = (0..obs.len())
        .filter(|&i| !obs.is_missing(i) && !qf.row_is_missing(i))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyResult("every row has a missing value".into()));
    }
    Ok(Cleaned {
        obs: obs.select(&kept),
        forecast: qf.select(&kept),
        dropped: obs.len() - kept.len(),
        kept,
    })
}

/// Column names for [`load_dataset`]. Every other column is an ensemble member.
#[derive(Debug, Clone)]
pub struct DatasetSchema {
    pub timestamp: String,
    pub target: String,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            target: "y".into(),
        }
    }
}

fn parse_cell<T: Real>(s: &str) -> Option<T> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Some(T::nan());
    }
    s.parse::<f64>().ok().map(T::of)
}

fn fmt_value<T: Real>(v: T) -> String {
    let v = v.as_f64();
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Reads `timestamp,y,ens_0,...` data. Data rows are numbered from 0 in errors.
pub fn load_dataset<T: Real>(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
) -> Result<(EnsembleMatrix<T>, ObservationSeries<T>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<T: Real, R: std::io::Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<(EnsembleMatrix<T>, ObservationSeries<T>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let ts_col = find(&schema.timestamp)?;
    let y_col = find(&schema.target)?;
    let ens_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != ts_col && c != y_col).collect();
    if ens_cols.len() < 2 {
        return Err(Error::Arity(format!(
            "need at least 2 ensemble columns, found {}",
            ens_cols.len()
        )));
    }
    let mut seen = HashSet::new();
    for &c in &ens_cols {
        if !seen.insert(&headers[c]) {
            return Err(Error::Schema(format!("duplicate column `{}`", headers[c])));
        }
    }

    let mut timestamps = Vec::new();
    let mut y = Vec::new();
    let mut ens = Vec::new();
    let mut bad_ts = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match rec.get(ts_col).and_then(parse_timestamp) {
            Some(t) => timestamps.push(t),
            None => {
                bad_ts.push(row);
                continue;
            }
        }
        let cell = |c: usize| -> Result<T> {
            let raw = rec.get(c).unwrap_or("");
            parse_cell(raw)
                .ok_or_else(|| Error::Schema(format!("row {row}: cannot parse `{raw}` in column `{}`", headers[c])))
        };
        y.push(cell(y_col)?);
        for &c in &ens_cols {
            ens.push(cell(c)?);
        }
    }
    if !bad_ts.is_empty() {
        return Err(Error::Timestamp(bad_ts));
    }
    let labels = ens_cols.iter().map(|&c| headers[c].clone()).collect();
    let m = Matrix::from_vec(timestamps.len(), ens_cols.len(), ens);
    let ensemble = EnsembleMatrix::new(m, labels, timestamps.clone())?;
    let obs = ObservationSeries::new(timestamps, y)?;
    Ok((ensemble, obs))
}

fn writer_for(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes the format read by [`load_dataset`], using the default schema names.
pub fn write_dataset<T: Real>(
    path: impl AsRef<Path>,
    ens: &EnsembleMatrix<T>,
    obs: &ObservationSeries<T>,
) -> Result<()> {
    if ens.timestamps() != obs.timestamps() {
        return Err(Error::Arity("ensembles and observations are not aligned".into()));
    }
    let mut w = writer_for(path.as_ref())?;
    let mut header = vec!["timestamp".to_string(), "y".to_string()];
    header.extend(ens.member_labels().iter().cloned());
    w.write_record(&header)?;
    for i in 0..obs.len() {
        let mut rec = vec![format_timestamp(obs.timestamps()[i]), fmt_value(obs.values()[i])];
        rec.extend(ens.row(i).iter().map(|&v| fmt_value(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Writes an ensemble alone: `timestamp,<labels...>`.
pub fn write_ensemble<T: Real>(path: impl AsRef<Path>, ens: &EnsembleMatrix<T>) -> Result<()> {
    let mut w = writer_for(path.as_ref())?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(ens.member_labels().iter().cloned());
    w.write_record(&header)?;
    for i in 0..ens.nrows() {
        let mut rec = vec![format_timestamp(ens.timestamps()[i])];
        rec.extend(ens.row(i).iter().map(|&v| fmt_value(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Writes `timestamp,q_0.05,...` with levels rendered at `precision` decimals.
pub fn write_quantile_forecast<T: Real>(
    path: impl AsRef<Path>,
    qf: &QuantileForecastMatrix<T>,
    precision: usize,
) -> Result<()> {
    let mut w = writer_for(path.as_ref())?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(
        qf.taus()
            .as_slice()
            .iter()
            .map(|&t| QuantileLevels::label(t, precision)),
    );
    w.write_record(&header)?;
    for i in 0..qf.nrows() {
        let mut rec = vec![format_timestamp(qf.timestamps()[i])];
        rec.extend(qf.row(i).iter().map(|&v| fmt_value(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

pub fn load_quantile_forecast<T: Real>(path: impl AsRef<Path>) -> Result<QuantileForecastMatrix<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.first().map(String::as_str) != Some("timestamp") {
        return Err(Error::Schema("missing column `timestamp`".into()));
    }
    let taus = headers[1..]
        .iter()
        .map(|h| {
            h.strip_prefix("q_")
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| Error::Schema(format!("column `{h}` is not a quantile label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let taus = QuantileLevels::new(taus)?;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut bad_ts = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match rec.get(0).and_then(parse_timestamp) {
            Some(t) => timestamps.push(t),
            None => {
                bad_ts.push(row);
                continue;
            }
        }
        for c in 1..headers.len() {
            let raw = rec.get(c).unwrap_or("");
            values.push(
                parse_cell::<T>(raw).ok_or_else(|| {
                    Error::Schema(format!("row {row}: cannot parse `{raw}` in column `{}`", headers[c]))
                })?,
            );
        }
    }
    if !bad_ts.is_empty() {
        return Err(Error::Timestamp(bad_ts));
    }
    let m = Matrix::from_vec(timestamps.len(), taus.len(), values);
    QuantileForecastMatrix::new(m, taus, timestamps)
}
