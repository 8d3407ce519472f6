use nabqr_core::simulator::Rng;
use nabqr_core::taqr::{
    init_state, one_step_quantile_prediction, pinball, run_taqr, solve_qr_batch, TaqrOptions, TaqrState, WindowMode,
};
use nabqr_core::{Matrix, QuantileLevels};
use proptest::prelude::*;

mod support;

use support::{brute_force_min, objective, random_design, sign_counts};

#[test]
fn batch_solution_matches_enumeration() {
    let mut rng = Rng::new(2024);
    for case in 0..120 {
        let k = 1 + case % 3;
        let n = k + 2 + (rng.next_u64() % (10 - k as u64)) as usize;
        let tau = [0.1, 0.25, 0.5, 0.9][case % 4];
        let x = random_design(&mut rng, n, k);
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let sol = solve_qr_batch(&x, &y, tau).unwrap();
        let best = brute_force_min(&x, &y, tau);
        assert!(
            (sol.objective - best).abs() < 1e-10,
            "case {case}: {} vs {best}",
            sol.objective
        );
    }
}

#[test]
fn batch_solution_invariants() {
    let mut rng = Rng::new(7);
    for case in 0..50 {
        let (n, k) = (30 + case, 1 + case % 5);
        let tau = 0.05 + 0.9 * rng.uniform();
        let x = random_design(&mut rng, n, k);
        let y: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let s = solve_qr_batch(&x, &y, tau).unwrap();
        assert_eq!(s.basis_h.len(), k);
        for &i in &s.basis_h {
            let fit: f64 = x.row(i).iter().zip(&s.beta).map(|(a, b)| a * b).sum();
            assert!((y[i] - fit).abs() <= 1e-10 * (1.0 + y[i].abs()));
        }
        let fresh = objective(&x, &y, &s.beta, tau);
        assert!((s.objective - fresh).abs() <= 1e-8 * fresh.max(1.0));
        let (neg, pos, zero) = sign_counts(&x, &y, &s.beta);
        assert_eq!(zero, k, "continuous data has no extra zero residuals");
        let nt = n as f64 * tau;
        assert!(neg as f64 <= nt && nt <= (neg + k) as f64);
        let nt1 = n as f64 * (1.0 - tau);
        assert!(pos as f64 <= nt1 && nt1 <= (pos + k) as f64);
    }
}

#[test]
fn intercept_only_beats_every_sample_quantile() {
    let mut rng = Rng::new(99);
    for &tau in &[0.1, 0.5, 0.9] {
        let y: Vec<f64> = (0..41).map(|_| rng.gaussian(2.0, 1.5)).collect();
        let x = Matrix::from_fn(41, 1, |_, _| 1.0);
        let s = solve_qr_batch(&x, &y, tau).unwrap();
        let loss = |m: f64| y.iter().map(|&v| pinball(v, m, tau)).sum::<f64>() / 41.0;
        let best = loss(s.beta[0]);
        for &cand in &y {
            assert!(best <= loss(cand) + 1e-12);
        }
    }
}

fn assert_matches_batch(state: &TaqrState<f64>) {
    let x = state.window_x();
    let y = state.window_y();
    let cold = solve_qr_batch(&x, &y, state.tau()).unwrap();
    let warm = state.solution().objective;
    assert!(
        (warm - cold.objective).abs() <= 1e-8 * cold.objective.abs().max(1e-12),
        "warm {warm} vs cold {}",
        cold.objective
    );
}

#[test]
fn every_update_matches_cold_solve() {
    let mut rng = Rng::new(5);
    let mut fallbacks = 0;
    let mut steps = 0;
    for seq in 0..12 {
        let (n, k, w) = (150, 1 + seq % 5, 40 + seq);
        let tau = [0.1, 0.3, 0.5, 0.8, 0.95][seq % 5];
        let x = random_design(&mut rng, n, k);
        let y: Vec<f64> = (0..n).map(|i| 0.01 * i as f64 + rng.normal()).collect();
        let mut state = init_state(&x.slice_rows(0, w), &y[..w], tau, w).unwrap();
        for t in w..n {
            let info = state.update(x.row(t), y[t]).unwrap();
            fallbacks += usize::from(info.fallback);
            steps += 1;
            assert_eq!(state.window_len(), w);
            assert_matches_batch(&state);
        }
    }
    assert!(fallbacks * 20 < steps, "{fallbacks} fallbacks in {steps} steps");
}

#[test]
fn expanding_window_matches_cold_solve() {
    let mut rng = Rng::new(55);
    let x = random_design(&mut rng, 120, 3);
    let y: Vec<f64> = (0..120).map(|_| rng.normal()).collect();
    let opts = TaqrOptions {
        mode: WindowMode::Expanding,
        ..Default::default()
    };
    let mut state = TaqrState::new(&x.slice_rows(0, 20), &y[..20], 0.7, opts).unwrap();
    for t in 20..120 {
        state.update(x.row(t), y[t]).unwrap();
        assert_matches_batch(&state);
    }
    assert_eq!(state.window_len(), 120);
}

#[test]
fn discrete_targets_stay_optimal() {
    // heavy ties make many vertices degenerate
    let mut rng = Rng::new(77);
    let n = 160;
    let x = Matrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { (rng.next_u64() % 4) as f64 });
    let y: Vec<f64> = (0..n).map(|_| (rng.next_u64() % 5) as f64).collect();
    for tau in [0.25, 0.5, 0.75] {
        let mut state = init_state(&x.slice_rows(0, 30), &y[..30], tau, 30).unwrap();
        for t in 30..n {
            state.update(x.row(t), y[t]).unwrap();
            assert_matches_batch(&state);
        }
    }
}

#[test]
fn predictions_match_rolling_batch_oracle() {
    let mut rng = Rng::new(31);
    let n = 260;
    let w = 61;
    let signal: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let x = Matrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { signal[i] });
    let y: Vec<f64> = (0..n).map(|i| 0.5 + 2.0 * signal[i] + 0.3 * rng.normal()).collect();
    let out = one_step_quantile_prediction(&x, &y, 0.5, w, n).unwrap();
    for t in w..n {
        let batch = solve_qr_batch(&x.slice_rows(t - w, t), &y[t - w..t], 0.5).unwrap();
        let oracle: f64 = x.row(t).iter().zip(&batch.beta).map(|(a, b)| a * b).sum();
        assert!((out.q_hat[t - w] - oracle).abs() < 1e-8, "t={t}");
    }
}

#[test]
fn beta_records_match_predictions() {
    let mut rng = Rng::new(8);
    let x = random_design(&mut rng, 80, 3);
    let y: Vec<f64> = (0..80).map(|_| rng.normal()).collect();
    let out = one_step_quantile_prediction(&x, &y, 0.4, 20, 80).unwrap();
    assert_eq!(out.beta_history.len(), 61);
    for (j, t) in (20..80).enumerate() {
        let rec = &out.beta_history[j];
        assert_eq!(rec.t, t - 1);
        let manual: f64 = x.row(t).iter().zip(&rec.beta).map(|(a, b)| a * b).sum();
        assert_eq!(manual, out.q_hat[j]);
    }
}

#[test]
fn exact_linear_target_for_every_level() {
    let mut rng = Rng::new(12);
    let x = random_design(&mut rng, 90, 3);
    let b = [0.4, -0.7, 1.1];
    let y = x.mul_vec(&b);
    let run = run_taqr(&x, &y, &QuantileLevels::new(vec![0.1, 0.5, 0.9]).unwrap(), 20, 90).unwrap();
    for i in 0..70 {
        let expect: f64 = x.row(20 + i).iter().zip(&b).map(|(a, c)| a * c).sum();
        for &v in run.q_hat.row(i) {
            assert!((v - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn run_rows_never_cross() {
    let mut rng = Rng::new(3);
    let x = random_design(&mut rng, 200, 3);
    let y: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
    let run = run_taqr(&x, &y, &QuantileLevels::new(vec![0.05, 0.5, 0.95]).unwrap(), 30, 200).unwrap();
    assert_eq!(run.q_hat.crossing_count(), 0);
    assert_eq!(run.beta.len(), 3);
}

#[test]
fn f32_instantiation_runs() {
    let x = Matrix::<f32>::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { (i % 7) as f32 });
    let y: Vec<f32> = (0..40).map(|i| (i % 7) as f32 * 0.5 + (i % 3) as f32).collect();
    let out = one_step_quantile_prediction(&x, &y, 0.5f32, 15, 40).unwrap();
    assert_eq!(out.q_hat.len(), 25);
    assert!(out.q_hat.iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn future_targets_do_not_leak(seed in 0u64..1000, cut in 25usize..70, tau in 0.05f64..0.95) {
        let mut rng = Rng::new(seed);
        let x = random_design(&mut rng, 80, 2);
        let y: Vec<f64> = (0..80).map(|_| rng.normal()).collect();
        let mut permuted = y.clone();
        permuted[cut..].reverse();
        let a = one_step_quantile_prediction(&x, &y, tau, 20, 80).unwrap();
        let b = one_step_quantile_prediction(&x, &permuted, tau, 20, 80).unwrap();
        // q_hat[j] predicts row 20 + j and may only use rows before it
        for j in 0..(cut - 20).min(60) {
            prop_assert_eq!(a.q_hat[j], b.q_hat[j]);
        }
    }
}
