use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::Real;

use super::simplex::{Row, Simplex};
use super::{batch_pivot_cap, check_tau, rows_from, solution_of, QrSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Keep the newest `window` rows.
    #[default]
    Sliding,
    /// Never drop rows.
    Expanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaqrOptions {
    /// Window length; `None` uses the initialization length.
    pub window: Option<usize>,
    pub mode: WindowMode,
    /// Pivot budget per update before falling back to a cold solve;
    /// `None` means twice the window length.
    pub max_pivots_per_update: Option<usize>,
}

impl Default for TaqrOptions {
    fn default() -> Self {
        Self {
            window: None,
            mode: WindowMode::Sliding,
            max_pivots_per_update: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRecord<T = f64> {
    /// Index of the last observation assimilated into `beta`.
    pub t: usize,
    pub beta: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateInfo {
    pub pivots: usize,
    /// The warm start gave up and the window was re-solved from scratch.
    pub fallback: bool,
}

/// Adaptive quantile regression state for one level.
#[derive(Debug, Clone)]
pub struct TaqrState<T = f64> {
    simplex: Simplex<T>,
    window: usize,
    mode: WindowMode,
    max_pivots: usize,
    t_current: usize,
    beta_history: Vec<BetaRecord<T>>,
    last: UpdateInfo,
    total_pivots: usize,
    fallbacks: usize,
    updates: usize,
}

/// Solves the initialization block and wraps it in a state whose rows carry
/// time indices `0..n_init`.
pub fn init_state<T: Real>(x_init: &Matrix<T>, y_init: &[T], tau: T, window: usize) -> Result<TaqrState<T>> {
    TaqrState::new(
        x_init,
        y_init,
        tau,
        TaqrOptions {
            window: Some(window),
            ..TaqrOptions::default()
        },
    )
}

impl<T: Real> TaqrState<T> {
    pub fn new(x_init: &Matrix<T>, y_init: &[T], tau: T, opts: TaqrOptions) -> Result<Self> {
        check_tau(tau)?;
        let (n, k) = (x_init.nrows(), x_init.ncols());
        if n != y_init.len() {
            return Err(Error::Arity(format!("{n} design rows for {} targets", y_init.len())));
        }
        if n <= k + 5 {
            return Err(Error::Underdetermined { rows: n, cols: k });
        }
        if !x_init.is_finite() || y_init.iter().any(|v| !v.is_finite()) {
            return Err(Error::Arity("initialization block must be finite".into()));
        }
        let window = opts.window.unwrap_or(n);
        if window < n {
            return Err(Error::Config(format!(
                "window {window} shorter than initialization {n}"
            )));
        }
        let (simplex, pivots) = Simplex::solve(rows_from(x_init, y_init, 0), tau, batch_pivot_cap(n, k))?;
        let beta = simplex.beta().to_vec();
        Ok(Self {
            simplex,
            window,
            mode: opts.mode,
            max_pivots: opts.max_pivots_per_update.unwrap_or(2 * window),
            t_current: n - 1,
            beta_history: vec![BetaRecord { t: n - 1, beta }],
            last: UpdateInfo {
                pivots,
                fallback: false,
            },
            total_pivots: 0,
            fallbacks: 0,
            updates: 0,
        })
    }

    pub fn tau(&self) -> T {
        self.simplex.tau()
    }

    pub fn beta(&self) -> &[T] {
        self.simplex.beta()
    }

    pub fn n_coefficients(&self) -> usize {
        self.simplex.k()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn t_current(&self) -> usize {
        self.t_current
    }

    pub fn beta_history(&self) -> &[BetaRecord<T>] {
        &self.beta_history
    }

    pub fn into_beta_history(self) -> Vec<BetaRecord<T>> {
        self.beta_history
    }

    pub fn last_update(&self) -> UpdateInfo {
        self.last
    }

    pub fn total_pivots(&self) -> usize {
        self.total_pivots
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn window_len(&self) -> usize {
        self.simplex.len()
    }

    pub fn window_x(&self) -> Matrix<T> {
        let rows: Vec<&[T]> = self.simplex.rows().map(|r| r.x.as_slice()).collect();
        Matrix::from_rows(&rows)
    }

    pub fn window_y(&self) -> Vec<T> {
        self.simplex.rows().map(|r| r.y).collect()
    }

    /// Time indices of the rows currently in the window.
    pub fn window_ids(&self) -> Vec<usize> {
        self.simplex.rows().map(|r| r.id).collect()
    }

    pub fn solution(&self) -> QrSolution<T> {
        solution_of(&self.simplex)
    }

    /// `x_nextᵀ·β`.
    pub fn predict(&self, x_next: &[T]) -> Result<T> {
        if x_next.len() != self.simplex.k() {
            return Err(Error::Arity(format!(
                "{} regressors for {} coefficients",
                x_next.len(),
                self.simplex.k()
            )));
        }
        Ok(dot(x_next, self.simplex.beta()))
    }

    /// Assimilates the next observation, drops the oldest row when the window
    /// is full and pivots back to optimality from the previous basis.
    pub fn update(&mut self, x_new: &[T], y_new: T) -> Result<UpdateInfo> {
        if x_new.len() != self.simplex.k() {
            return Err(Error::Arity(format!(
                "{} regressors for {} coefficients",
                x_new.len(),
                self.simplex.k()
            )));
        }
        if x_new.iter().any(|v| !v.is_finite()) || !y_new.is_finite() {
            return Err(Error::Arity("update row must be finite".into()));
        }
        let t = self.t_current + 1;
        let backup = self.simplex.clone();
        self.simplex.push(Row {
            id: t,
            x: x_new.to_vec(),
            y: y_new,
        });

        let mut info = UpdateInfo::default();
        let warm = (|| -> Result<usize> {
            let mut pivots = 0;
            if self.mode == WindowMode::Sliding && self.simplex.len() > self.window {
                pivots += self.simplex.pop_front()?;
            }
            pivots += self.simplex.optimize(self.max_pivots.saturating_sub(pivots))?;
            Ok(pivots)
        })();
        match warm {
            Ok(p) => info.pivots = p,
            Err(_) => {
                // rebuild on the same window the warm path was working on
                let mut rows: VecDeque<Row<T>> = backup.rows().cloned().collect();
                rows.push_back(Row {
                    id: t,
                    x: x_new.to_vec(),
                    y: y_new,
                });
                if self.mode == WindowMode::Sliding && rows.len() > self.window {
                    rows.pop_front();
                }
                let cap = batch_pivot_cap(rows.len(), backup.k());
                let (s, p) = match Simplex::solve(rows, backup.tau(), cap) {
                    Ok(v) => v,
                    Err(e) => {
                        self.simplex = backup;
                        return Err(e);
                    }
                };
                self.simplex = s;
                info = UpdateInfo {
                    pivots: p,
                    fallback: true,
                };
                self.fallbacks += 1;
            }
        }
        self.t_current = t;
        self.updates += 1;
        self.total_pivots += info.pivots;
        self.last = info;
        self.beta_history.push(BetaRecord {
            t,
            beta: self.simplex.beta().to_vec(),
        });
        Ok(info)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taqr::solve_qr_batch;

    fn intercept(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, 1, |_, _| 1.0)
    }

    #[test]
    fn init_matches_batch() {
        let x = Matrix::from_fn(20, 3, |i, j| match j {
            0 => 1.0,
            1 => ((i * 7 + 3) % 11) as f64 / 11.0,
            _ => ((i * 5 + 1) % 13) as f64 / 13.0,
        });
        let y: Vec<f64> = (0..20).map(|i| ((i * 17 + 5) % 19) as f64 / 7.0).collect();
        let state = init_state(&x, &y, 0.3, 20).unwrap();
        let batch = solve_qr_batch(&x, &y, 0.3).unwrap();
        assert_eq!(state.solution().basis_h.len(), 3);
        assert!((state.solution().objective - batch.objective).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!(matches!(
            init_state(&x, &[1.0, 2.0, 3.0], 0.5, 3),
            Err(Error::Underdetermined { .. })
        ));
    }

    #[test]
    fn constant_target() {
        let s = init_state(&intercept(9), &[4.5; 9], 0.5, 9).unwrap();
        assert_eq!(s.beta(), &[4.5]);
    }

    #[test]
    fn predict_is_dot_product() {
        let x = Matrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = init_state(&x, &y, 0.5, 10).unwrap();
        // exact fit y = x1
        assert!((s.beta()[0]).abs() < 1e-12 && (s.beta()[1] - 1.0).abs() < 1e-12);
        assert!((s.predict(&[5.0, 7.0]).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(s.predict(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(s.predict(&[1.0]), Err(Error::Arity(_))));
    }

    #[test]
    fn optimal_basis_survives_same_sign_swap() {
        // descending sample: the dropped row and the new row are both above the median
        let y: Vec<f64> = (1..=21).rev().map(f64::from).collect();
        let mut s = init_state(&intercept(21), &y, 0.5, 21).unwrap();
        assert_eq!(s.beta(), &[11.0]);
        let info = s.update(&[1.0], 100.0).unwrap();
        assert_eq!(info.pivots, 0);
        assert!(!info.fallback);
        assert_eq!(s.beta(), &[11.0]);
        assert_eq!(s.window_len(), 21);
        assert_eq!(s.window_ids()[0], 1);
    }

    #[test]
    fn expanding_window_keeps_rows() {
        let y: Vec<f64> = (0..9).map(f64::from).collect();
        let mut s = TaqrState::new(
            &intercept(9),
            &y,
            0.5,
            TaqrOptions {
                mode: WindowMode::Expanding,
                ..Default::default()
            },
        )
        .unwrap();
        for v in [20.0, 21.0, 22.0] {
            s.update(&[1.0], v).unwrap();
        }
        assert_eq!(s.window_len(), 12);
        assert_eq!(s.beta_history().len(), 4);
        assert_eq!(s.t_current(), 11);
    }

    #[test]
    fn identical_rows_become_singular() {
        let x = Matrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        let mut s = init_state(&x, &y, 0.5, 8).unwrap();
        let mut failed = false;
        for _ in 0..8 {
            if let Err(e) = s.update(&[1.0, 3.0], 1.0) {
                assert!(matches!(e, Error::SingularDesign(_)), "{e}");
                failed = true;
                break;
            }
        }
        assert!(failed);

        let same = Matrix::from_fn(8, 2, |_, j| if j == 0 { 1.0 } else { 3.0 });
        assert!(matches!(
            init_state(&same, &[1.0; 8], 0.5, 8),
            Err(Error::SingularDesign(_))
        ));
    }
}
