use nabqr_core::data::hourly_timestamps;
use nabqr_core::scoring::{
    calculate_scores, crps_ensemble, crps_ensemble_with, mae, quantile_score, reliability, variogram_score,
    CrpsEstimator, ScoreConfig,
};
use nabqr_core::simulator::Rng;
use nabqr_core::{EnsembleMatrix, Matrix, QuantileForecastMatrix, QuantileLevels};

mod support;

use support::{naive_crps, naive_pinball, naive_variogram, random_ensemble, random_forecast, rel_close};

#[test]
fn scores_match_naive_loops() {
    let taus = [0.05, 0.25, 0.5, 0.75, 0.95];
    for seed in 0..40 {
        let mut rng = Rng::new(seed);
        let t = 2 + (rng.next_u64() % 49) as usize;
        let m = 2 + (rng.next_u64() % 19) as usize;
        let y: Vec<f64> = (0..t).map(|_| rng.uniform()).collect();
        let ens = random_ensemble(&mut rng, t, m);
        let q = random_forecast(&mut rng, t, &taus);

        let mut qs = 0.0;
        let mut abs = 0.0;
        for i in 0..t {
            for (j, &tau) in taus.iter().enumerate() {
                qs += naive_pinball(y[i], q.row(i)[j], tau);
            }
            abs += (y[i] - q.row(i)[2]).abs();
        }
        qs /= (t * taus.len()) as f64;
        abs /= t as f64;
        assert!(rel_close(quantile_score(&y, &q).unwrap(), qs, 1e-12));
        assert!(rel_close(mae(&y, &q).unwrap(), abs, 1e-12));
        assert!(rel_close(
            crps_ensemble(&y, &ens).unwrap(),
            naive_crps(&y, &ens, false),
            1e-12
        ));
        let fair = crps_ensemble_with(&y, &ens, CrpsEstimator::Fair).unwrap();
        assert!(rel_close(fair, naive_crps(&y, &ens, true), 1e-12));

        for (p, lag) in [(0.5, t - 1), (1.0, 1), (2.0, (t - 1).min(5))] {
            let v = variogram_score(&y, &ens, p, lag).unwrap();
            assert!(
                rel_close(v, naive_variogram(&y, &ens, p, lag), 1e-12),
                "seed {seed} p {p}"
            );
        }

        let cov = reliability(&y, &q).unwrap();
        for (j, &(tau, c)) in cov.0.iter().enumerate() {
            assert_eq!(tau, taus[j]);
            let hits = (0..t).filter(|&i| y[i] <= q.row(i)[j]).count();
            assert_eq!(c, hits as f64 / t as f64);
        }
    }
}

#[test]
fn gaussian_crps_matches_closed_form() {
    // E|X| − ½E|X − X'| for X ~ N(0, 1) and y = 0
    let exact = (2.0_f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt();
    assert!((exact - 0.2337).abs() < 1e-4);
    let mut rng = Rng::new(7);
    let n = 10_000;
    let v = Matrix::from_fn(1, n, |_, _| rng.normal());
    let ens = EnsembleMatrix::with_default_labels(v, hourly_timestamps(1)).unwrap();
    let c = crps_ensemble(&[0.0], &ens).unwrap();
    assert!((c - exact).abs() / exact < 0.02, "{c} vs {exact}");
}

#[test]
fn constant_quantile_score_is_minimised_at_empirical_quantile() {
    let mut rng = Rng::new(3);
    let n = 101;
    let y: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    for tau in [0.1, 0.5, 0.9] {
        let score_at = |c: f64| {
            let q = QuantileForecastMatrix::new(
                Matrix::from_fn(n, 1, |_, _| c),
                QuantileLevels::new(vec![tau]).unwrap(),
                hourly_timestamps(n),
            )
            .unwrap();
            quantile_score(&y, &q).unwrap()
        };
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let best = grid
            .iter()
            .copied()
            .min_by(|&a, &b| score_at(a).total_cmp(&score_at(b)))
            .unwrap();
        // with n·tau non-integer the minimiser is the ⌈n·tau⌉-th order statistic
        let k = (n as f64 * tau).ceil() as usize - 1;
        let target = sorted[k];
        let lo = if k > 0 { sorted[k - 1] } else { 0.0 };
        let hi = if k + 1 < n { sorted[k + 1] } else { 1.0 };
        assert!(
            best > lo && best < hi,
            "tau {tau}: grid argmin {best}, order statistic {target}"
        );
        assert!(score_at(target) <= score_at(best) + 1e-15);
    }
}

#[test]
fn crps_is_invariant_to_member_order_and_joint_translation() {
    let mut rng = Rng::new(11);
    let (t, m) = (20, 9);
    let y: Vec<f64> = (0..t).map(|_| rng.uniform()).collect();
    let ens = random_ensemble(&mut rng, t, m);
    let base = crps_ensemble(&y, &ens).unwrap();

    let perm: Vec<usize> = (0..m).rev().collect();
    let permuted = Matrix::from_fn(t, m, |i, j| ens.row(i)[perm[j]]);
    let permuted = EnsembleMatrix::with_default_labels(permuted, hourly_timestamps(t)).unwrap();
    assert!(rel_close(crps_ensemble(&y, &permuted).unwrap(), base, 1e-12));

    let shift = 3.25;
    let shifted = Matrix::from_fn(t, m, |i, j| ens.row(i)[j] + shift);
    let shifted = EnsembleMatrix::with_default_labels(shifted, hourly_timestamps(t)).unwrap();
    let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
    assert!(rel_close(crps_ensemble(&ys, &shifted).unwrap(), base, 1e-10));
}

#[test]
fn calibrated_forecast_scores_better_than_biased_one() {
    let mut rng = Rng::new(5);
    let n = 4000;
    let taus = [0.1, 0.5, 0.9];
    let y: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let build = |offset: f64| {
        QuantileForecastMatrix::new(
            Matrix::from_fn(n, 3, |_, j| (taus[j] + offset).clamp(0.0, 1.0)),
            QuantileLevels::new(taus.to_vec()).unwrap(),
            hourly_timestamps(n),
        )
        .unwrap()
    };
    let ens = random_ensemble(&mut rng, n, 5);
    let good = calculate_scores(&y, &build(0.0), &ens, &ScoreConfig::default()).unwrap();
    let bad = calculate_scores(&y, &build(0.2), &ens, &ScoreConfig::default()).unwrap();
    assert!(good.qs < bad.qs);
    assert!(good.mae < bad.mae);
    for (c, tau) in good.coverage.values().iter().zip(taus) {
        assert!((c - tau).abs() < 0.03);
    }
}
