//! Time-adaptive quantile regression.
//!
//! [`solve_qr_batch`] solves one quantile regression exactly with the simplex
//! method. [`TaqrState`] keeps that solution optimal on a sliding window of
//! recent rows, re-entering the simplex from the previous basis after every
//! new observation. [`one_step_quantile_prediction`] and [`run_taqr`] roll the
//! state through a series, predicting each row before assimilating it.

mod adaptive;
mod run;
mod simplex;

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

pub use adaptive::{init_state, BetaRecord, TaqrOptions, TaqrState, UpdateInfo, WindowMode};
pub use run::{
    one_step_quantile_prediction, one_step_quantile_prediction_with, run_taqr, run_taqr_with, write_beta_history,
    OneStepOutput, RunStats, TaqrRun,
};

use simplex::{Row, Simplex};

/// Pinball loss `ρ_τ(y − q)`.
#[inline]
pub fn pinball<T: Real>(y: T, q: T, tau: T) -> T {
    let u = y - q;
    if u >= T::zero() {
        u * tau
    } else {
        -u * (T::one() - tau)
    }
}

/// An optimal vertex of the quantile regression LP.
#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution<T = f64> {
    pub beta: Vec<T>,
    /// Ids of the K rows fitted exactly, ascending. For batch solves these are
    /// row indices of the design; for adaptive states, time indices.
    pub basis_h: Vec<usize>,
    pub objective: T,
    pub tau: T,
}

pub(crate) fn check_tau<T: Real>(tau: T) -> Result<()> {
    if tau > T::zero() && tau < T::one() {
        Ok(())
    } else {
        Err(Error::QuantileLevels(format!("{tau} is outside (0, 1)")))
    }
}

pub(crate) fn batch_pivot_cap(n: usize, k: usize) -> usize {
    50 * (n + k) + 1000
}

pub(crate) fn rows_from<T: Real>(x: &Matrix<T>, y: &[T], first_id: usize) -> VecDeque<Row<T>> {
    x.rows_iter()
        .zip(y)
        .enumerate()
        .map(|(i, (r, &yv))| Row {
            id: first_id + i,
            x: r.to_vec(),
            y: yv,
        })
        .collect()
}

pub(crate) fn solution_of<T: Real>(s: &Simplex<T>) -> QrSolution<T> {
    QrSolution {
        beta: s.beta().to_vec(),
        basis_h: s.basis_ids(),
        objective: s.objective(),
        tau: s.tau(),
    }
}

/// Exact minimizer of `Σ ρ_τ(y_i − x_iᵀβ)`.
pub fn solve_qr_batch<T: Real>(x: &Matrix<T>, y: &[T], tau: T) -> Result<QrSolution<T>> {
    check_tau(tau)?;
    if x.nrows() != y.len() {
        return Err(Error::Arity(format!(
            "{} design rows for {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() <= x.ncols() {
        return Err(Error::Underdetermined {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Arity("design and target must be finite".into()));
    }
    let (s, _) = Simplex::solve(rows_from(x, y, 0), tau, batch_pivot_cap(x.nrows(), x.ncols()))?;
    Ok(solution_of(&s))
}
