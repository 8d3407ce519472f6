use std::path::Path;

use rayon::prelude::*;

use crate::data::{hourly_timestamps, QuantileForecastMatrix, QuantileLevels};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

use super::adaptive::{BetaRecord, TaqrOptions, TaqrState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub updates: usize,
    pub pivots: usize,
    pub fallbacks: usize,
    /// Rows skipped because the regressors or the target were missing.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct OneStepOutput<T = f64> {
    /// Predictions for rows `n_init..n_full`.
    pub q_hat: Vec<T>,
    pub beta_history: Vec<BetaRecord<T>>,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct TaqrRun<T = f64> {
    pub q_hat: QuantileForecastMatrix<T>,
    pub y_test: Vec<T>,
    /// One trajectory per level, in level order.
    pub beta: Vec<Vec<BetaRecord<T>>>,
    pub stats: Vec<RunStats>,
}

pub fn one_step_quantile_prediction<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    tau: T,
    n_init: usize,
    n_full: usize,
) -> Result<OneStepOutput<T>> {
    one_step_quantile_prediction_with(x, y, tau, n_init, n_full, TaqrOptions::default())
}

/// Initializes on rows `0..n_init`, then for each `t` in `n_init..n_full`
/// predicts row `t` from the state built on rows before `t` and only then
/// assimilates `(x_t, y_t)`.
///
/// A row with missing regressors yields a NaN prediction; a missing target is
/// predicted but not assimilated.
pub fn one_step_quantile_prediction_with<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    tau: T,
    n_init: usize,
    n_full: usize,
    opts: TaqrOptions,
) -> Result<OneStepOutput<T>> {
    check_range(x, y, n_init, n_full)?;
    let mut state = TaqrState::new(&x.slice_rows(0, n_init), &y[..n_init], tau, opts)?;
    let mut q_hat = Vec::with_capacity(n_full - n_init);
    let mut stats = RunStats::default();
    for t in n_init..n_full {
        let row = x.row(t);
        if row.iter().any(|v| !v.is_finite()) {
            q_hat.push(T::nan());
            stats.skipped += 1;
            continue;
        }
        q_hat.push(state.predict(row)?);
        if !y[t].is_finite() {
            stats.skipped += 1;
            continue;
        }
        let info = state.update(row, y[t])?;
        stats.updates += 1;
        stats.pivots += info.pivots;
        stats.fallbacks += usize::from(info.fallback);
    }
    Ok(OneStepOutput {
        q_hat,
        beta_history: state.into_beta_history(),
        stats,
    })
}

fn check_range<T: Real>(x: &Matrix<T>, y: &[T], n_init: usize, n_full: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Arity(format!(
            "{} design rows for {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if !(x.ncols() < n_init && n_init < n_full && n_full <= y.len()) {
        return Err(Error::Arity(format!(
            "need K < n_init < n_full <= T, got K={}, n_init={n_init}, n_full={n_full}, T={}",
            x.ncols(),
            y.len()
        )));
    }
    Ok(())
}

/// [`run_taqr_with`] on hourly timestamps and default options.
pub fn run_taqr<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    q_list: &QuantileLevels,
    n_init: usize,
    n_full: usize,
) -> Result<TaqrRun<T>> {
    let ts = hourly_timestamps(y.len());
    run_taqr_with(x, y, &ts, q_list, n_init, n_full, TaqrOptions::default())
}

/// Runs every level independently (in parallel), assembles the columns and
/// sorts each row across levels.
pub fn run_taqr_with<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    timestamps: &[i64],
    q_list: &QuantileLevels,
    n_init: usize,
    n_full: usize,
    opts: TaqrOptions,
) -> Result<TaqrRun<T>> {
    check_range(x, y, n_init, n_full)?;
    if timestamps.len() != y.len() {
        return Err(Error::Arity(format!(
            "{} timestamps for {} rows",
            timestamps.len(),
            y.len()
        )));
    }
    let outputs = q_list
        .as_slice()
        .par_iter()
        .map(|&tau| {
            one_step_quantile_prediction_with(x, y, T::of(tau), n_init, n_full, opts).map_err(|e| Error::Tau {
                tau,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = n_full - n_init;
    let q = q_list.len();
    let values = Matrix::from_fn(n, q, |i, j| outputs[j].q_hat[i]);
    let mut q_hat = QuantileForecastMatrix::new(values, q_list.clone(), timestamps[n_init..n_full].to_vec())?;
    q_hat.sort_rows();
    let mut beta = Vec::with_capacity(q);
    let mut stats = Vec::with_capacity(q);
    for out in outputs {
        beta.push(out.beta_history);
        stats.push(out.stats);
    }
    Ok(TaqrRun {
        q_hat,
        y_test: y[n_init..n_full].to_vec(),
        beta,
        stats,
    })
}

/// `t,tau,beta_0,...,beta_{K-1}`.
pub fn write_beta_history<T: Real>(path: impl AsRef<Path>, tau: f64, records: &[BetaRecord<T>]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let k = records.first().map_or(0, |r| r.beta.len());
    let mut header = vec!["t".to_string(), "tau".to_string()];
    header.extend((0..k).map(|j| format!("beta_{j}")));
    w.write_record(&header)?;
    for r in records {
        let mut rec = vec![r.t.to_string(), format!("{tau}")];
        rec.extend(r.beta.iter().map(|b| format!("{}", b.as_f64())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(n: usize) -> (Matrix<f64>, Vec<f64>) {
        let x = Matrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { ((i * 37) % 17) as f64 / 17.0 });
        let y = (0..n).map(|i| ((i * 53) % 23) as f64 / 23.0 + x[(i, 1)]).collect();
        (x, y)
    }

    #[test]
    fn minimal_run_gives_one_prediction() {
        let (x, y) = design(20);
        let out = one_step_quantile_prediction(&x, &y, 0.5, 10, 11).unwrap();
        assert_eq!(out.q_hat.len(), 1);
        assert_eq!(out.beta_history.len(), 2);
    }

    #[test]
    fn zero_target_predicts_zero() {
        let (x, _) = design(40);
        let y = vec![0.0; 40];
        let out = one_step_quantile_prediction(&x, &y, 0.3, 10, 40).unwrap();
        assert!(out.q_hat.iter().all(|q| q.abs() < 1e-12));
    }

    #[test]
    fn singleton_level_matches_one_step() {
        let (x, y) = design(60);
        let run = run_taqr(&x, &y, &QuantileLevels::new(vec![0.5]).unwrap(), 15, 60).unwrap();
        let one = one_step_quantile_prediction(&x, &y, 0.5, 15, 60).unwrap();
        assert_eq!(run.q_hat.values().column(0), one.q_hat);
        assert_eq!(run.y_test, y[15..60].to_vec());
    }

    #[test]
    fn range_checks() {
        let (x, y) = design(20);
        assert!(matches!(
            one_step_quantile_prediction(&x, &y, 0.5, 10, 10),
            Err(Error::Arity(_))
        ));
        assert!(matches!(
            one_step_quantile_prediction(&x, &y, 0.5, 2, 10),
            Err(Error::Arity(_))
        ));
        assert!(run_taqr(&x, &y, &QuantileLevels::new(vec![0.5]).unwrap(), 10, 21).is_err());
    }

    #[test]
    fn failing_level_is_named() {
        let x = Matrix::from_fn(20, 2, |_, j| if j == 0 { 1.0 } else { 2.0 });
        let y = vec![1.0; 20];
        let err = run_taqr(&x, &y, &QuantileLevels::new(vec![0.25]).unwrap(), 10, 20).unwrap_err();
        assert!(matches!(err, Error::Tau { tau, .. } if tau == 0.25));
    }
}
