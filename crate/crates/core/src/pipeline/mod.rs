//! End-to-end run: data → corrector → corrected ensembles → TAQR → scores.
//!
//! Row bookkeeping, with `L` timesteps and `T` data rows:
//!
//! * corrected row `i` belongs to data row `L + i`, for `i < N = T − L`;
//! * the corrector trains on corrected rows `0..s`, `s = floor(train_frac·N)`;
//! * TAQR runs on corrected rows `s..N` (the evaluation region) with an
//!   intercept column prepended, initializes on the first `n_init` of them
//!   and predicts the rest up to `n_full`.
//!
//! Every stage is recorded, with the data-row ranges it touched, in
//! `stage_log.json`.

mod plot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corrector::{
    build_training_windows, correct_ensembles, train_corrector, write_loss_history, CorrectorConfig,
};
use crate::data::{
    clean_nans, load_dataset, write_ensemble, write_quantile_forecast, DatasetSchema, EnsembleMatrix,
    ObservationSeries, QuantileForecastMatrix, QuantileLevels,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scoring::{
    calculate_scores, crps_ensemble_with, ensemble_quantiles, mae, quantile_score, ScoreConfig, ScoreReport,
};
use crate::simulator::{simulate_wind_power_sde_with, EnsembleScheme, SdeParams};
use crate::taqr::{run_taqr_with, write_beta_history, BetaRecord, RunStats, TaqrOptions, WindowMode};

pub use plot::{band_pairs, emit_fan_chart};

/// `data_source` value that asks for simulated data.
pub const SIMULATE: &str = "simulate";

/// Environment variable overriding [`PipelineConfig::output_dir`].
pub const OUTPUT_DIR_ENV: &str = "NABQR_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub n_ensembles: usize,
    pub params: SdeParams,
    pub ensemble: EnsembleScheme,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 2000,
            n_ensembles: 10,
            params: SdeParams::default(),
            ensemble: EnsembleScheme::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaqrConfig {
    /// Warm-up rows at the start of the evaluation region; default
    /// `min(200, region/4)`.
    pub n_init: Option<usize>,
    /// End of the predicted rows within the evaluation region; default its
    /// length.
    pub n_full: Option<usize>,
    pub window_mode: WindowMode,
    pub max_pivots_per_update: Option<usize>,
}

impl Default for TaqrConfig {
    fn default() -> Self {
        Self {
            n_init: None,
            n_full: None,
            window_mode: WindowMode::Sliding,
            max_pivots_per_update: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// CSV path, or `"simulate"`.
    pub data_source: String,
    pub train_frac: f64,
    pub timesteps: usize,
    pub taus: Vec<f64>,
    /// Decimals used in `q_<tau>` column labels and file names.
    pub tau_precision: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub taqr: TaqrConfig,
    pub simulation: SimulationConfig,
    /// `seed` is ignored here; the pipeline seed is used.
    pub corrector: CorrectorConfig,
    pub scoring: ScoreConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_source: SIMULATE.into(),
            train_frac: 0.7,
            timesteps: 24,
            taus: QuantileLevels::grid(0.05).expect("valid grid").as_slice().to_vec(),
            tau_precision: 2,
            seed: 42,
            output_dir: PathBuf::from("nabqr_output"),
            taqr: TaqrConfig::default(),
            simulation: SimulationConfig::default(),
            corrector: CorrectorConfig::default(),
            scoring: ScoreConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// TOML, or JSON when the text is a JSON object.
    pub fn from_str_any(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")));
        }
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            Self::from_str_any(&text)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }

    /// Applies `NABQR_OUTPUT_DIR` when set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn quantile_levels(&self) -> Result<QuantileLevels> {
        QuantileLevels::new(self.taus.clone())
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.quantile_levels()?;
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac must lie in (0, 1), got {}",
                self.train_frac
            )));
        }
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be at least 1".into()));
        }
        if let (Some(a), Some(b)) = (self.taqr.n_init, self.taqr.n_full) {
            if a >= b {
                return Err(Error::Config(format!("n_init ({a}) must be smaller than n_full ({b})")));
            }
        }
        if self.data_source.trim().is_empty() {
            return Err(Error::Config("data_source is empty".into()));
        }
        if self.data_source == SIMULATE {
            self.simulation.params.validate()?;
            if self.simulation.horizon <= self.timesteps {
                return Err(Error::Config(format!(
                    "simulation horizon {} must exceed timesteps {}",
                    self.simulation.horizon, self.timesteps
                )));
            }
        }
        self.corrector.validate()?;
        if !(self.scoring.variogram_p > 0.0) {
            return Err(Error::Config("scoring.variogram_p must be positive".into()));
        }
        Ok(())
    }
}

/// Half-open range of data rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RowRange {
    pub start: usize,
    pub end: usize,
}

impl RowRange {
    fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: &'static str,
    pub rows: Option<RowRange>,
    pub detail: serde_json::Value,
}

/// Stage names in execution order.
pub const STAGES: [&str; 7] = [
    "load_data",
    "train_corrector",
    "correct_ensembles",
    "taqr",
    "clean_nans",
    "score",
    "write_outputs",
];

/// Raw-ensemble reference on the same evaluation rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineScores {
    /// Against the ensemble median.
    pub mae: f64,
    /// Of the ensemble's empirical quantiles.
    pub qs: f64,
    pub crps: f64,
}

/// Pipeline score divided by baseline score; below 1 is an improvement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Improvement {
    pub mae_ratio: f64,
    pub qs_ratio: f64,
}

/// Contents of `scores.json`: the score report in its fixed key order,
/// followed by the raw-ensemble comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineScores {
    #[serde(flatten)]
    pub report: ScoreReport,
    pub baseline: BaselineScores,
    pub improvement: Improvement,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub scores: PipelineScores,
    pub corrected: EnsembleMatrix,
    /// Forecasts for the predicted rows, before NaN cleaning.
    pub q_hat: QuantileForecastMatrix,
    /// Observations aligned with `q_hat`.
    pub y_test: ObservationSeries,
    pub beta: Vec<Vec<BetaRecord>>,
    pub taqr_stats: Vec<RunStats>,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<PathBuf>,
}

/// Runs every stage; on failure writes `.failed` into the output directory
/// (keeping whatever was already written) and returns the stage error.
pub fn run_nabqr_pipeline(config: &PipelineConfig) -> Result<PipelineResult> {
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join(".failed");
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = Runner::new(config).run();
    if let Err(e) = &result {
        let _ = std::fs::write(&marker, format!("{e}\n"));
    }
    result
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    stages: Vec<StageRecord>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

impl<'a> Runner<'a> {
    fn new(config: &'a PipelineConfig) -> Self {
        Self {
            config,
            stages: Vec::new(),
        }
    }

    fn record(&mut self, stage: &'static str, rows: Option<RowRange>, detail: serde_json::Value) {
        self.stages.push(StageRecord { stage, rows, detail });
    }

    fn load(&self) -> Result<(EnsembleMatrix, ObservationSeries)> {
        let c = self.config;
        if c.data_source == SIMULATE {
            let s = &c.simulation;
            simulate_wind_power_sde_with(&s.params, &s.ensemble, s.horizon, s.n_ensembles, c.seed)
        } else {
            load_dataset(&c.data_source, &DatasetSchema::default())
        }
    }

    fn run(mut self) -> Result<PipelineResult> {
        let c = self.config;
        let taus = c.quantile_levels()?;
        let l = c.timesteps;

        // 1. data
        let (ens, obs) = stage("load_data", self.load())?;
        let t_rows = obs.len();
        let n_windows = t_rows.saturating_sub(l);
        let split = (c.train_frac * n_windows as f64).floor() as usize;
        let region = n_windows.saturating_sub(split);
        let n_init = c.taqr.n_init.unwrap_or(200.min(region / 4));
        let n_full = c.taqr.n_full.unwrap_or(region);
        stage("load_data", check_plan(t_rows, l, region, n_init, n_full, taus.len()))?;
        self.record(
            "load_data",
            Some(RowRange::new(0, t_rows)),
            serde_json::json!({
                "source": c.data_source,
                "members": ens.n_members(),
                "missing_observations": obs.missing_mask().iter().filter(|&&m| m).count(),
            }),
        );

        // 2. corrector on the earliest windows
        let corrector_cfg = CorrectorConfig {
            seed: c.seed,
            ..c.corrector
        };
        let windows = stage("train_corrector", build_training_windows(&ens, &obs, l, c.train_frac))?;
        let trained = stage("train_corrector", train_corrector(&windows, &taus, &corrector_cfg))?;
        self.record(
            "train_corrector",
            Some(RowRange::new(l, l + split)),
            serde_json::json!({
                "windows": split,
                "input_rows": RowRange::new(1, l + split),
                "epochs": trained.epoch_losses.len(),
                "initial_loss": trained.initial_loss,
                "final_loss": trained.final_loss,
            }),
        );

        // 3. corrected ensembles for every window
        let corrected = stage("correct_ensembles", correct_ensembles(&trained.model, &ens))?;
        self.record(
            "correct_ensembles",
            Some(RowRange::new(l, t_rows)),
            serde_json::json!({ "columns": corrected.n_members() }),
        );

        // 4. TAQR on the evaluation region
        let region_rows = RowRange::new(l + split, t_rows);
        let design = with_intercept(&corrected.slice(split, n_windows));
        let y_region: Vec<f64> = obs.values()[region_rows.start..].to_vec();
        let ts_region = &obs.timestamps()[region_rows.start..];
        let opts = TaqrOptions {
            window: None,
            mode: c.taqr.window_mode,
            max_pivots_per_update: c.taqr.max_pivots_per_update,
        };
        let run = stage(
            "taqr",
            run_taqr_with(&design, &y_region, ts_region, &taus, n_init, n_full, opts),
        )?;
        let eval_rows = RowRange::new(region_rows.start + n_init, region_rows.start + n_full);
        let totals = run.stats.iter().fold(RunStats::default(), |a, s| RunStats {
            updates: a.updates + s.updates,
            pivots: a.pivots + s.pivots,
            fallbacks: a.fallbacks + s.fallbacks,
            skipped: a.skipped + s.skipped,
        });
        self.record(
            "taqr",
            Some(eval_rows),
            serde_json::json!({
                "init_rows": RowRange::new(region_rows.start, region_rows.start + n_init),
                "coefficients": design.ncols(),
                "updates": totals.updates,
                "pivots": totals.pivots,
                "fallbacks": totals.fallbacks,
                "skipped": totals.skipped,
            }),
        );

        // 5. drop rows with missing values
        let y_test = obs.slice(eval_rows.start, eval_rows.end);
        let cleaned = stage("clean_nans", clean_nans(&y_test, &run.q_hat))?;
        self.record(
            "clean_nans",
            Some(eval_rows),
            serde_json::json!({ "kept": cleaned.kept.len(), "dropped": cleaned.dropped }),
        );

        // 6. scores, plus the raw ensemble on the same rows
        let scores = stage("score", self.score(&cleaned, &ens, eval_rows, &taus))?;
        self.record(
            "score",
            Some(eval_rows),
            serde_json::json!({ "n_effective": scores.report.n_effective }),
        );

        // 7. files
        let mut result = PipelineResult {
            scores,
            corrected,
            q_hat: run.q_hat,
            y_test,
            beta: run.beta,
            taqr_stats: run.stats,
            stages: Vec::new(),
            artifacts: Vec::new(),
        };
        let artifacts = stage("write_outputs", self.write(&result, &cleaned, &trained, &taus))?;
        result.artifacts = artifacts;
        result.stages = self.stages;
        Ok(result)
    }

    fn score(
        &self,
        cleaned: &crate::data::Cleaned,
        ens: &EnsembleMatrix,
        eval_rows: RowRange,
        taus: &QuantileLevels,
    ) -> Result<PipelineScores> {
        let y = cleaned.obs.values();
        let forecast = &cleaned.forecast;
        let as_members = forecast.as_ensemble(self.config.tau_precision)?;
        let report = calculate_scores(y, forecast, &as_members, &self.config.scoring)?;

        let rows: Vec<usize> = cleaned.kept.iter().map(|&k| eval_rows.start + k).collect();
        let raw = ens.select(&rows);
        let raw_q = ensemble_quantiles(&raw, taus)?;
        let raw_median = ensemble_quantiles(&raw, &QuantileLevels::new(vec![0.5])?)?;
        let baseline = BaselineScores {
            mae: mae(y, &raw_median)?,
            qs: quantile_score(y, &raw_q)?,
            crps: crps_ensemble_with(y, &raw, self.config.scoring.crps)?,
        };
        let improvement = Improvement {
            mae_ratio: report.mae / baseline.mae,
            qs_ratio: report.qs / baseline.qs,
        };
        Ok(PipelineScores {
            report,
            baseline,
            improvement,
        })
    }

    fn write(
        &mut self,
        result: &PipelineResult,
        cleaned: &crate::data::Cleaned,
        trained: &crate::corrector::TrainedCorrector,
        taus: &QuantileLevels,
    ) -> Result<Vec<PathBuf>> {
        let dir = &self.config.output_dir;
        let prec = self.config.tau_precision;
        let mut files = Vec::new();

        let p = dir.join("corrected_ensembles.csv");
        write_ensemble(&p, &result.corrected)?;
        files.push(p);

        let p = dir.join("q_hat.csv");
        write_quantile_forecast(&p, &result.q_hat, prec)?;
        files.push(p);

        for (tau, records) in taus.as_slice().iter().zip(&result.beta) {
            let p = dir.join(format!("beta_tau_{tau:.prec$}.csv"));
            write_beta_history(&p, *tau, records)?;
            files.push(p);
        }

        let p = dir.join("corrector_loss.csv");
        write_loss_history(&p, trained)?;
        files.push(p);

        let p = dir.join("scores.json");
        let json = serde_json::to_string_pretty(&result.scores)?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
        files.push(p);

        let (svg, csv) = emit_fan_chart(&cleaned.obs, &cleaned.forecast, dir.join("fan_chart.svg"), prec)?;
        files.push(svg);
        files.push(csv);

        let p = dir.join("stage_log.json");
        let mut names: Vec<String> = files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        names.push("stage_log.json".into());
        self.record("write_outputs", None, serde_json::json!({ "files": names }));
        let json = serde_json::to_string_pretty(&self.stages)?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
        files.push(p);
        Ok(files)
    }
}

fn check_plan(t_rows: usize, l: usize, region: usize, n_init: usize, n_full: usize, q: usize) -> Result<()> {
    if t_rows <= l {
        return Err(Error::Arity(format!(
            "{t_rows} rows cannot fill a window of {l} timesteps"
        )));
    }
    let k = q + 1;
    if n_init >= n_full {
        return Err(Error::Config(format!(
            "n_init ({n_init}) must be smaller than n_full ({n_full})"
        )));
    }
    if n_full > region {
        return Err(Error::Config(format!(
            "n_full ({n_full}) exceeds the {region}-row evaluation region"
        )));
    }
    if n_init <= k + 5 {
        return Err(Error::Config(format!(
            "n_init ({n_init}) must exceed {} for {k} regression coefficients; \
             use more data or fewer quantile levels",
            k + 5
        )));
    }
    Ok(())
}

/// `[1, x_1, ..., x_Q]` design rows; rows with a missing value stay missing.
fn with_intercept(corrected: &EnsembleMatrix) -> Matrix {
    corrected.values().with_intercept()
}
