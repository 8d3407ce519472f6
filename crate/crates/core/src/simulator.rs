//! Synthetic normalized wind power.
//!
//! The state follows a mean-reverting jump diffusion on [0, 1]:
//!
//! ```text
//! x_{t+1} = x_t + θ(x_t)·(μ − x_t)·dt + σ_t·√(x_t(1 − x_t))·√dt·Z_t + J_t
//! θ(x)    = θ₀·(1 + k·max(0, x − (1 − zone))/zone)
//! σ_t²    = ω + α·ε²_{t−1} + β·σ²_{t−1},    ε_t = σ_t·Z_t
//! J_t     = Σ_{n ≤ N_t} S_n,  N_t ~ Poisson(λ·dt),  S_n ~ N(m_J, s_J²)
//! ```
//!
//! followed by a clip to [0, 1]. Ensemble members re-run the same dynamics
//! with a member-specific level `μ·b`, `b ~ N(1, 0.05²)`, and shocks that are
//! only partially shared with the observed path, which makes them informative
//! but biased forecasts of it.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Stream `s` is the seeded generator
//! advanced by `s` calls to `jump()` (2¹²⁸ steps each); the observed path uses
//! stream 0 and member `m` stream `m + 1`. Uniforms are
//! `((u64 >> 11) + 0.5)·2⁻⁵³`, normals come from the Box–Muller cosine and sine
//! pair (cosine first), and Poisson counts from Knuth's product method.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::data::{hourly_timestamps, EnsembleMatrix, ObservationSeries};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Seeded generator with a documented, portable output sequence.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    pub fn stream(seed: u64, index: u64) -> Self {
        let mut inner = Xoshiro256PlusPlus::seed_from_u64(seed);
        for _ in 0..index {
            inner.jump();
        }
        Self { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * a.sin());
        r * a.cos()
    }

    pub fn gaussian(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    pub fn poisson(&mut self, lambda: f64) -> u32 {
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut p = self.uniform();
        while p > limit {
            k += 1;
            p *= self.uniform();
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeParams {
    pub theta_base: f64,
    pub mu_level: f64,
    pub garch_omega: f64,
    pub garch_alpha: f64,
    pub garch_beta: f64,
    pub jump_intensity: f64,
    pub jump_mean: f64,
    pub jump_sd: f64,
    pub repel_strength: f64,
    pub repel_zone: f64,
    pub dt: f64,
    pub x0: f64,
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            theta_base: 0.1,
            mu_level: 0.5,
            garch_omega: 1e-4,
            garch_alpha: 0.1,
            garch_beta: 0.85,
            jump_intensity: 0.02,
            jump_mean: 0.0,
            jump_sd: 0.15,
            repel_strength: 4.0,
            repel_zone: 0.1,
            dt: 1.0,
            x0: 0.4,
        }
    }
}

/// Expected jumps per step above which Knuth's sampler underflows.
const MAX_JUMP_RATE: f64 = 50.0;

impl SdeParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Parameter(what.to_string()));
        let all = [
            self.theta_base,
            self.mu_level,
            self.garch_omega,
            self.garch_alpha,
            self.garch_beta,
            self.jump_intensity,
            self.jump_mean,
            self.jump_sd,
            self.repel_strength,
            self.repel_zone,
            self.dt,
            self.x0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("all parameters must be finite");
        }
        if self.garch_omega <= 0.0 {
            return fail("garch_omega > 0");
        }
        if self.garch_alpha < 0.0 || self.garch_beta < 0.0 {
            return fail("garch_alpha >= 0 and garch_beta >= 0");
        }
        if self.garch_alpha + self.garch_beta >= 1.0 {
            return fail("garch_alpha + garch_beta < 1");
        }
        if self.jump_intensity < 0.0 {
            return fail("jump_intensity >= 0");
        }
        if self.jump_intensity * self.dt > MAX_JUMP_RATE {
            return fail("jump_intensity * dt <= 50");
        }
        if self.jump_sd < 0.0 {
            return fail("jump_sd >= 0");
        }
        if self.dt <= 0.0 {
            return fail("dt > 0");
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return fail("x0 in [0, 1]");
        }
        if !(self.mu_level > 0.0 && self.mu_level < 1.0) {
            return fail("mu_level in (0, 1)");
        }
        if self.theta_base < 0.0 {
            return fail("theta_base >= 0");
        }
        if self.repel_strength < 0.0 {
            return fail("repel_strength >= 0");
        }
        if !(self.repel_zone > 0.0 && self.repel_zone <= 1.0) {
            return fail("repel_zone in (0, 1]");
        }
        Ok(())
    }

    /// State-dependent reversion rate, rising inside the band below 1.
    pub fn reversion_rate(&self, x: f64) -> f64 {
        let excess = (x - (1.0 - self.repel_zone)).max(0.0);
        self.theta_base * (1.0 + self.repel_strength * excess / self.repel_zone)
    }

    pub fn long_run_variance(&self) -> f64 {
        self.garch_omega / (1.0 - self.garch_alpha - self.garch_beta)
    }
}

/// How ensemble members relate to the observed path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleScheme {
    /// Standard deviation of the multiplicative bias on `mu_level`.
    pub bias_sd: f64,
    /// Correlation between a member's diffusion shocks and the observed ones.
    pub shock_corr: f64,
    /// Members replay the observed jumps instead of drawing their own.
    pub share_jumps: bool,
}

impl Default for EnsembleScheme {
    fn default() -> Self {
        Self {
            bias_sd: 0.05,
            shock_corr: 0.8,
            share_jumps: true,
        }
    }
}

/// One simulated trajectory with its latent quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub values: Vec<f64>,
    /// Conditional variance `σ_t²` used at each step.
    pub variance: Vec<f64>,
    /// Number of jumps at each step.
    pub jumps: Vec<u32>,
    /// Standard normal diffusion shocks `Z_t`.
    pub shocks: Vec<f64>,
    /// Total jump size at each step.
    pub jump_sizes: Vec<f64>,
}

struct Drivers<'a> {
    shocks: &'a [f64],
    jump_sizes: &'a [f64],
    corr: f64,
    share_jumps: bool,
}

fn run_path(p: &SdeParams, mu: f64, steps: usize, rng: &mut Rng, shared: Option<&Drivers>) -> SdePath {
    let mut path = SdePath {
        values: Vec::with_capacity(steps),
        variance: Vec::with_capacity(steps),
        jumps: Vec::with_capacity(steps),
        shocks: Vec::with_capacity(steps),
        jump_sizes: Vec::with_capacity(steps),
    };
    let sqrt_dt = p.dt.sqrt();
    let mut x = p.x0;
    let mut h = p.long_run_variance();
    for t in 0..steps {
        path.values.push(x);
        path.variance.push(h);
        let own = rng.normal();
        let z = match shared {
            Some(d) => d.corr * d.shocks[t] + (1.0 - d.corr * d.corr).sqrt() * own,
            None => own,
        };
        let (n, jump) = match shared {
            Some(d) if d.share_jumps => (0, d.jump_sizes[t]),
            _ => {
                let n = rng.poisson(p.jump_intensity * p.dt);
                let size: f64 = (0..n).map(|_| rng.gaussian(p.jump_mean, p.jump_sd)).sum();
                (n, size)
            }
        };
        let sigma = h.sqrt();
        let g = (x * (1.0 - x)).max(0.0).sqrt();
        let drift = p.reversion_rate(x) * (mu - x) * p.dt;
        x = (x + drift + sigma * g * sqrt_dt * z + jump).clamp(0.0, 1.0);
        let eps = sigma * z;
        h = p.garch_omega + p.garch_alpha * eps * eps + p.garch_beta * h;
        path.jumps.push(n);
        path.shocks.push(z);
        path.jump_sizes.push(jump);
    }
    path
}

/// Single observed-path simulation from stream 0 of `seed`.
pub fn simulate_path(params: &SdeParams, steps: usize, seed: u64) -> Result<SdePath> {
    params.validate()?;
    Ok(run_path(params, params.mu_level, steps, &mut Rng::new(seed), None))
}

/// Observed path plus `n_ensembles` biased members, all in [0, 1].
pub fn simulate_wind_power_sde(
    params: &SdeParams,
    horizon: usize,
    n_ensembles: usize,
    seed: u64,
) -> Result<(EnsembleMatrix<f64>, ObservationSeries<f64>)> {
    simulate_wind_power_sde_with(params, &EnsembleScheme::default(), horizon, n_ensembles, seed)
}

pub fn simulate_wind_power_sde_with(
    params: &SdeParams,
    scheme: &EnsembleScheme,
    horizon: usize,
    n_ensembles: usize,
    seed: u64,
) -> Result<(EnsembleMatrix<f64>, ObservationSeries<f64>)> {
    params.validate()?;
    if horizon < 2 {
        return Err(Error::Parameter("horizon >= 2".into()));
    }
    if n_ensembles < 2 {
        return Err(Error::Parameter("n_ensembles >= 2".into()));
    }
    if !(scheme.bias_sd >= 0.0) || !(0.0..=1.0).contains(&scheme.shock_corr) {
        return Err(Error::Parameter("bias_sd >= 0 and shock_corr in [0, 1]".into()));
    }
    let truth = run_path(params, params.mu_level, horizon, &mut Rng::new(seed), None);
    let drivers = Drivers {
        shocks: &truth.shocks,
        jump_sizes: &truth.jump_sizes,
        corr: scheme.shock_corr,
        share_jumps: scheme.share_jumps,
    };
    let mut values = Matrix::zeros(horizon, n_ensembles);
    for m in 0..n_ensembles {
        let mut rng = Rng::stream(seed, m as u64 + 1);
        let bias = rng.gaussian(1.0, scheme.bias_sd);
        let mu = (params.mu_level * bias).clamp(1e-3, 1.0 - 1e-3);
        let member = run_path(params, mu, horizon, &mut rng, Some(&drivers));
        for (t, v) in member.values.into_iter().enumerate() {
            values[(t, m)] = v;
        }
    }
    let ts = hourly_timestamps(horizon);
    let ens = EnsembleMatrix::with_default_labels(values, ts.clone())?;
    let obs = ObservationSeries::new(ts, truth.values)?;
    Ok((ens, obs))
}

/// `n_steps × n_series` AR(1) panel with equicorrelated innovations.
pub fn simulate_correlated_ar1(
    n_series: usize,
    n_steps: usize,
    phi: f64,
    cross_corr: f64,
    seed: u64,
) -> Result<Matrix<f64>> {
    if !(phi.abs() < 1.0) {
        return Err(Error::Parameter(format!(
            "|phi| < 1 required for stationarity, got {phi}"
        )));
    }
    if !(0.0..1.0).contains(&cross_corr) {
        return Err(Error::Parameter(format!("cross_corr in [0, 1), got {cross_corr}")));
    }
    let mut rng = Rng::new(seed);
    let (a, b) = (cross_corr.sqrt(), (1.0 - cross_corr).sqrt());
    let stationary = 1.0 / (1.0 - phi * phi).sqrt();
    let mut out = Matrix::zeros(n_steps, n_series);
    for t in 0..n_steps {
        let common = rng.normal();
        for m in 0..n_series {
            let e = a * common + b * rng.normal();
            out[(t, m)] = if t == 0 {
                e * stationary
            } else {
                phi * out[(t - 1, m)] + e
            };
        }
    }
    Ok(out)
}
