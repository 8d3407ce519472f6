//! Proper scoring rules and coverage diagnostics.

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::data::{sort_ascending, EnsembleMatrix, QuantileForecastMatrix};
use crate::error::{Error, Result};
use crate::Real;

pub use crate::taqr::pinball;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrpsEstimator {
    /// `(1/M)Σ|x_j − y| − (1/2M²)Σ|x_j − x_k|`
    #[default]
    Nrg,
    /// Second term divided by `2M(M−1)` instead.
    Fair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub variogram_p: f64,
    /// `None` means `min(24, T − 1)`.
    pub variogram_max_lag: Option<usize>,
    pub crps: CrpsEstimator,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            variogram_p: 0.5,
            variogram_max_lag: None,
            crps: CrpsEstimator::Nrg,
        }
    }
}

/// Per-level coverage, serialized as a level-keyed map in level order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coverage(pub Vec<(f64, f64)>);

impl Coverage {
    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|&(_, c)| c).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Serialize for Coverage {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (tau, c) in &self.0 {
            map.serialize_entry(&format!("{tau}"), c)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub mae: f64,
    pub qs: f64,
    pub crps: f64,
    pub vars: f64,
    pub coverage: Coverage,
    pub n_effective: usize,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Arity(format!("{a} observations for {b} {what} rows")))
    }
}

/// Mean pinball loss over all (time, level) pairs.
pub fn quantile_score<T: Real>(y: &[T], q_hat: &QuantileForecastMatrix<T>) -> Result<T> {
    check_len(y.len(), q_hat.nrows(), "forecast")?;
    if y.is_empty() {
        return Err(Error::Arity("no rows to score".into()));
    }
    let taus: Vec<T> = q_hat.taus().as_slice().iter().map(|&t| T::of(t)).collect();
    let total: T = y
        .iter()
        .enumerate()
        .map(|(i, &yv)| {
            q_hat
                .row(i)
                .iter()
                .zip(&taus)
                .map(|(&q, &tau)| pinball(yv, q, tau))
                .sum::<T>()
        })
        .sum();
    Ok(total / T::of((y.len() * taus.len()) as f64))
}

/// Mean absolute error of the median column.
pub fn mae<T: Real>(y: &[T], q_hat: &QuantileForecastMatrix<T>) -> Result<T> {
    check_len(y.len(), q_hat.nrows(), "forecast")?;
    if y.is_empty() {
        return Err(Error::Arity("no rows to score".into()));
    }
    let median = q_hat
        .column_for(0.5)
        .ok_or_else(|| Error::Config("MAE needs the 0.5 quantile level".into()))?;
    let total: T = y.iter().zip(&median).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(total / T::of(y.len() as f64))
}

/// Ensemble CRPS of one row; uses the sorted-member identity
/// `Σ_{j,k}|x_j − x_k| = 2Σ_i (2i − M − 1)·x_(i)`.
pub fn crps_row<T: Real>(y: T, members: &[T], estimator: CrpsEstimator) -> T {
    let m = members.len();
    let mf = T::of(m as f64);
    let first: T = members.iter().map(|&x| (x - y).abs()).sum::<T>() / mf;
    if m < 2 {
        return first;
    }
    let mut sorted = members.to_vec();
    sort_ascending(&mut sorted);
    let pair_sum: T = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| T::of((2 * (i + 1)) as f64 - mf.as_f64() - 1.0) * x)
        .sum::<T>()
        * T::of(2.0);
    let denom = match estimator {
        CrpsEstimator::Nrg => T::of(2.0) * mf * mf,
        CrpsEstimator::Fair => T::of(2.0) * mf * (mf - T::one()),
    };
    first - pair_sum / denom
}

/// Time-averaged ensemble CRPS.
pub fn crps_ensemble<T: Real>(y: &[T], ens: &EnsembleMatrix<T>) -> Result<T> {
    crps_ensemble_with(y, ens, CrpsEstimator::Nrg)
}

pub fn crps_ensemble_with<T: Real>(y: &[T], ens: &EnsembleMatrix<T>, estimator: CrpsEstimator) -> Result<T> {
    check_len(y.len(), ens.nrows(), "ensemble")?;
    if y.is_empty() || ens.n_members() == 0 {
        return Err(Error::Arity("empty ensemble".into()));
    }
    let total: T = y
        .iter()
        .enumerate()
        .map(|(t, &yv)| crps_row(yv, ens.row(t), estimator))
        .sum();
    Ok(total / T::of(y.len() as f64))
}

/// `Σ_{t, 1 ≤ l ≤ max_lag} (|y_t − y_{t+l}|^p − (1/M)Σ_j|x_{j,t} − x_{j,t+l}|^p)²`.
pub fn variogram_score<T: Real>(y: &[T], ens: &EnsembleMatrix<T>, p: T, max_lag: usize) -> Result<T> {
    check_len(y.len(), ens.nrows(), "ensemble")?;
    if p <= T::zero() {
        return Err(Error::Config(format!("variogram exponent must be positive, got {p}")));
    }
    if max_lag >= y.len() {
        return Err(Error::Arity(format!(
            "max_lag {max_lag} needs more than {} rows",
            y.len()
        )));
    }
    let m = T::of(ens.n_members() as f64);
    let mut total = T::zero();
    for lag in 1..=max_lag {
        for t in 0..y.len() - lag {
            let obs = (y[t] - y[t + lag]).abs().powf(p);
            let model = ens
                .row(t)
                .iter()
                .zip(ens.row(t + lag))
                .map(|(&a, &b)| (a - b).abs().powf(p))
                .sum::<T>()
                / m;
            let d = obs - model;
            total += d * d;
        }
    }
    Ok(total)
}

/// Fraction of rows with `y_t ≤ q_hat[t, τ]`, per level.
pub fn reliability<T: Real>(y: &[T], q_hat: &QuantileForecastMatrix<T>) -> Result<Coverage> {
    check_len(y.len(), q_hat.nrows(), "forecast")?;
    if y.is_empty() {
        return Err(Error::Arity("no rows to score".into()));
    }
    let n = y.len() as f64;
    let cov = q_hat
        .taus()
        .as_slice()
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let hits = y.iter().enumerate().filter(|&(i, &yv)| yv <= q_hat.row(i)[j]).count();
            (tau, hits as f64 / n)
        })
        .collect();
    Ok(Coverage(cov))
}

pub fn default_max_lag(n: usize) -> usize {
    24.min(n.saturating_sub(1))
}

/// All scores for one aligned, NaN-free set of inputs.
pub fn calculate_scores<T: Real>(
    y: &[T],
    q_hat: &QuantileForecastMatrix<T>,
    ens: &EnsembleMatrix<T>,
    config: &ScoreConfig,
) -> Result<ScoreReport> {
    let max_lag = config.variogram_max_lag.unwrap_or_else(|| default_max_lag(y.len()));
    Ok(ScoreReport {
        mae: mae(y, q_hat)?.as_f64(),
        qs: quantile_score(y, q_hat)?.as_f64(),
        crps: crps_ensemble_with(y, ens, config.crps)?.as_f64(),
        vars: variogram_score(y, ens, T::of(config.variogram_p), max_lag)?.as_f64(),
        coverage: reliability(y, q_hat)?,
        n_effective: y.len(),
    })
}

/// Empirical `tau`-quantiles of each ensemble row (linear interpolation
/// between order statistics), used as the raw-ensemble baseline forecast.
pub fn ensemble_quantiles<T: Real>(
    ens: &EnsembleMatrix<T>,
    taus: &crate::data::QuantileLevels,
) -> Result<QuantileForecastMatrix<T>> {
    let m = ens.n_members();
    let values = crate::matrix::Matrix::from_fn(ens.nrows(), taus.len(), |_, _| T::zero());
    let mut values = values;
    for i in 0..ens.nrows() {
        let mut row = ens.row(i).to_vec();
        sort_ascending(&mut row);
        for (j, &tau) in taus.as_slice().iter().enumerate() {
            let pos = tau * (m - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            let w = T::of(pos - lo as f64);
            values[(i, j)] = row[lo] + w * (row[hi] - row[lo]);
        }
    }
    QuantileForecastMatrix::new(values, taus.clone(), ens.timestamps().to_vec())
}
