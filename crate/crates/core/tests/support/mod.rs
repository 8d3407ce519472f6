//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the solver, scoring or training code it checks.
#![allow(dead_code)]

use nabqr_core::corrector::{CorrectorModel, TrainingWindowSet};
use nabqr_core::data::hourly_timestamps;
use nabqr_core::simulator::Rng;
use nabqr_core::taqr::pinball;
use nabqr_core::{EnsembleMatrix, Matrix, QuantileForecastMatrix, QuantileLevels};

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------- regression

/// Intercept column followed by standard normal regressors.
pub fn random_design(rng: &mut Rng, n: usize, k: usize) -> Matrix<f64> {
    Matrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.normal() })
}

pub fn objective(x: &Matrix<f64>, y: &[f64], beta: &[f64], tau: f64) -> f64 {
    (0..y.len())
        .map(|i| {
            let fit: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            pinball(y[i], fit, tau)
        })
        .sum()
}

/// Gaussian elimination with partial pivoting, written out here so the oracle
/// shares no code with the solver.
pub fn solve_square(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| {
            let mut r = r.clone();
            r.push(v);
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())?;
        if m[p][c].abs() < 1e-12 {
            return None;
        }
        m.swap(p, c);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for j in c..=n {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Residual sign counts at `beta`, zero residuals in neither.
pub fn sign_counts(x: &Matrix<f64>, y: &[f64], beta: &[f64]) -> (usize, usize, usize) {
    let (mut neg, mut pos, mut zero) = (0, 0, 0);
    for i in 0..y.len() {
        let fit: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
        let r = y[i] - fit;
        if r.abs() < 1e-9 * (1.0 + y[i].abs()) {
            zero += 1;
        } else if r < 0.0 {
            neg += 1;
        } else {
            pos += 1;
        }
    }
    (neg, pos, zero)
}

/// Necessary optimality condition on the residual signs of a basic solution.
pub fn satisfies_bounds(x: &Matrix<f64>, y: &[f64], beta: &[f64], tau: f64) -> bool {
    let n = y.len() as f64;
    let (neg, pos, zero) = sign_counts(x, y, beta);
    let (neg, pos, zero) = (neg as f64, pos as f64, zero as f64);
    neg <= n * tau + 1e-9
        && n * tau <= neg + zero + 1e-9
        && pos <= n * (1.0 - tau) + 1e-9
        && n * (1.0 - tau) <= pos + zero + 1e-9
}

/// Minimum objective over every exact fit through `K` rows that satisfies
/// the sign bounds.
pub fn brute_force_min(x: &Matrix<f64>, y: &[f64], tau: f64) -> f64 {
    let k = x.ncols();
    subsets(y.len(), k)
        .into_iter()
        .filter_map(|h| {
            let a: Vec<Vec<f64>> = h.iter().map(|&i| x.row(i).to_vec()).collect();
            let b: Vec<f64> = h.iter().map(|&i| y[i]).collect();
            solve_square(&a, &b)
        })
        .filter(|beta| satisfies_bounds(x, y, beta, tau))
        .map(|beta| objective(x, y, &beta, tau))
        .fold(f64::INFINITY, f64::min)
}

// ------------------------------------------------------------------- scoring

pub fn random_ensemble(rng: &mut Rng, t: usize, m: usize) -> EnsembleMatrix {
    let v = Matrix::from_fn(t, m, |_, _| rng.uniform());
    EnsembleMatrix::with_default_labels(v, hourly_timestamps(t)).unwrap()
}

pub fn random_forecast(rng: &mut Rng, t: usize, taus: &[f64]) -> QuantileForecastMatrix {
    let v = Matrix::from_fn(t, taus.len(), |_, _| rng.uniform());
    let mut q =
        QuantileForecastMatrix::new(v, QuantileLevels::new(taus.to_vec()).unwrap(), hourly_timestamps(t)).unwrap();
    q.sort_rows();
    q
}

pub fn naive_pinball(y: f64, q: f64, tau: f64) -> f64 {
    let u = y - q;
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Mean over rows of `mean|x − y| − Σ|x − x'| / denom`, with the denominator
/// `2M²` (energy form) or `2M(M−1)` (fair form).
pub fn naive_crps(y: &[f64], ens: &EnsembleMatrix, fair: bool) -> f64 {
    let m = ens.n_members() as f64;
    let mut total = 0.0;
    for (t, &yv) in y.iter().enumerate() {
        let row = ens.row(t);
        let mut a = 0.0;
        for &x in row {
            a += (x - yv).abs();
        }
        let mut b = 0.0;
        for &x in row {
            for &z in row {
                b += (x - z).abs();
            }
        }
        let denom = if fair { 2.0 * m * (m - 1.0) } else { 2.0 * m * m };
        total += a / m - b / denom;
    }
    total / y.len() as f64
}

pub fn naive_variogram(y: &[f64], ens: &EnsembleMatrix, p: f64, max_lag: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..y.len() {
        for j in (i + 1)..y.len() {
            if j - i > max_lag {
                continue;
            }
            let mut model = 0.0;
            for k in 0..ens.n_members() {
                model += (ens.row(i)[k] - ens.row(j)[k]).abs().powf(p);
            }
            model /= ens.n_members() as f64;
            total += ((y[i] - y[j]).abs().powf(p) - model).powi(2);
        }
    }
    total
}

// ----------------------------------------------------------------- corrector

pub fn random_data(seed: u64, n: usize, m: usize) -> (EnsembleMatrix, nabqr_core::ObservationSeries) {
    let mut rng = Rng::new(seed);
    let v = Matrix::from_fn(n, m, |_, _| rng.normal());
    let y = (0..n).map(|i| 0.5 * v.row(i)[0] + 0.3 * rng.normal()).collect();
    (
        EnsembleMatrix::with_default_labels(v, hourly_timestamps(n)).unwrap(),
        nabqr_core::ObservationSeries::hourly(y),
    )
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences with step `1e-5` on `picks` randomly chosen
/// parameters; returns the worst relative error.
pub fn gradient_check(model: &CorrectorModel, data: &TrainingWindowSet, picks: usize, seed: u64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let smoothing = 1e-3;
    let (_, grad) = model.loss_and_gradient(data, &idx, smoothing).unwrap();
    let mut rng = Rng::new(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..picks {
        let p = (rng.next_u64() % model.n_params() as u64) as usize;
        let mut plus = model.clone();
        plus.params_mut()[p] += h;
        let mut minus = model.clone();
        minus.params_mut()[p] -= h;
        let numeric =
            (plus.loss(data, &idx, smoothing).unwrap() - minus.loss(data, &idx, smoothing).unwrap()) / (2.0 * h);
        worst = worst.max(relative_error(grad[p], numeric));
    }
    worst
}
