//! `nabqr`: every pipeline stage from the command line.
//!
//! Each subcommand reads the shared configuration file (`--config`, TOML or
//! JSON, see `default.toml`) and then applies its flag overrides. Exit codes:
//! 0 on success, 1 for usage and validation errors, 2 for runtime failures.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nabqr_core::corrector::{build_training_windows, correct_ensembles, train_corrector, write_loss_history};
use nabqr_core::data::{load_quantile_forecast, write_dataset, write_ensemble, write_quantile_forecast};
use nabqr_core::pipeline::{emit_fan_chart, run_nabqr_pipeline, PipelineConfig, SIMULATE};
use nabqr_core::scoring::calculate_scores;
use nabqr_core::simulator::simulate_wind_power_sde_with;
use nabqr_core::taqr::{run_taqr_with, write_beta_history, TaqrOptions, WindowMode};
use nabqr_core::{
    clean_nans, load_dataset, DatasetSchema, EnsembleMatrix, Error, ObservationSeries, QuantileForecastMatrix,
};

#[derive(Parser, Debug)]
#[command(
    name = "nabqr",
    version,
    arg_required_else_help = true,
    about = "Ensemble correction and time-adaptive quantile regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (TOML, or JSON); omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured quantile levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate observations and ensemble members to a dataset CSV (`--seed` required).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
        /// Number of ensemble members.
        #[arg(long)]
        ensembles: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ensemble corrector on a dataset CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV with `timestamp`, `y` and one column per member.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        timesteps: Option<usize>,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Model file (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Per-epoch loss CSV; defaults to the model path with `.loss.csv`.
        #[arg(long)]
        loss: Option<PathBuf>,
        /// Also write the corrected ensembles for every window.
        #[arg(long)]
        corrected: Option<PathBuf>,
    },
    /// Rolling one-step quantile predictions with the adaptive regression.
    Taqr {
        #[command(flatten)]
        common: Common,
        /// CSV with `timestamp`, `y` and the regressor columns.
        #[arg(long)]
        data: PathBuf,
        /// Rows used to initialize; defaults to a quarter of the rows, at most 200.
        #[arg(long)]
        n_init: Option<usize>,
        /// End of the predicted rows; defaults to all rows.
        #[arg(long)]
        n_full: Option<usize>,
        /// Do not prepend a column of ones to the regressors.
        #[arg(long)]
        no_intercept: bool,
        #[arg(long, value_enum)]
        window_mode: Option<Mode>,
        /// Quantile forecasts CSV.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-level coefficient trajectories.
        #[arg(long)]
        beta_dir: Option<PathBuf>,
    },
    /// Score quantile forecasts against observations.
    Score {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV supplying `y` (and members for `--ensemble data`).
        #[arg(long)]
        data: PathBuf,
        /// Quantile forecasts CSV (`timestamp,q_...`).
        #[arg(long)]
        forecast: PathBuf,
        /// Ensemble used for CRPS and the variogram score.
        #[arg(long, value_enum, default_value_t = EnsembleSource::Forecast)]
        ensemble: EnsembleSource,
        /// Report path; printed to standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write all artifacts.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV, or `simulate`.
        #[arg(long)]
        data_source: Option<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Fan chart (SVG plus companion CSV) of forecasts and observations.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Sliding,
    Expanding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnsembleSource {
    /// The forecast quantiles treated as equally weighted members.
    Forecast,
    /// The member columns of the data file.
    Data,
}

/// Failure split by exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    config.apply_env();
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(taus) = &common.taus {
        config.taus = taus.clone();
    }
    Ok(config)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            common,
            horizon,
            ensembles,
            out,
        } => {
            if common.seed.is_none() {
                return Err(Failure::Usage("simulate needs an explicit --seed".into()));
            }
            let mut config = load_config(&common)?;
            let sim = &mut config.simulation;
            if let Some(h) = horizon {
                sim.horizon = h;
            }
            if let Some(m) = ensembles {
                sim.n_ensembles = m;
            }
            let (ens, obs) =
                simulate_wind_power_sde_with(&sim.params, &sim.ensemble, sim.horizon, sim.n_ensembles, config.seed)?;
            write_dataset(&out, &ens, &obs)?;
            println!(
                "wrote {} ({} rows, {} members)",
                out.display(),
                obs.len(),
                ens.n_members()
            );
        }
        Command::Train {
            common,
            data,
            timesteps,
            train_frac,
            epochs,
            hidden,
            learning_rate,
            model,
            loss,
            corrected,
        } => {
            let mut config = load_config(&common)?;
            if let Some(v) = timesteps {
                config.timesteps = v;
            }
            if let Some(v) = train_frac {
                config.train_frac = v;
            }
            let c = &mut config.corrector;
            if let Some(v) = epochs {
                c.epochs = v;
            }
            if let Some(v) = hidden {
                c.hidden = v;
            }
            if let Some(v) = learning_rate {
                c.learning_rate = v;
            }
            c.seed = config.seed;
            c.validate()?;
            let taus = config.quantile_levels()?;
            let (ens, obs) = load_dataset::<f64>(&data, &DatasetSchema::default())?;
            let windows = build_training_windows(&ens, &obs, config.timesteps, config.train_frac)?;
            let trained = train_corrector(&windows, &taus, &config.corrector)?;
            trained.model.save(&model)?;
            let loss = loss.unwrap_or_else(|| model.with_extension("loss.csv"));
            write_loss_history(&loss, &trained)?;
            println!(
                "wrote {} and {} (loss {:.6} -> {:.6})",
                model.display(),
                loss.display(),
                trained.initial_loss,
                trained.final_loss
            );
            if let Some(path) = corrected {
                let out = correct_ensembles(&trained.model, &ens)?;
                write_ensemble(&path, &out)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Taqr {
            common,
            data,
            n_init,
            n_full,
            no_intercept,
            window_mode,
            out,
            beta_dir,
        } => {
            let config = load_config(&common)?;
            let taus = config.quantile_levels()?;
            let (x, obs) = load_dataset::<f64>(&data, &DatasetSchema::default())?;
            let design = if no_intercept {
                x.values().clone()
            } else {
                x.values().with_intercept()
            };
            let rows = obs.len();
            let n_init = n_init.or(config.taqr.n_init).unwrap_or(200.min(rows / 4));
            let n_full = n_full.or(config.taqr.n_full).unwrap_or(rows);
            let opts = TaqrOptions {
                window: None,
                mode: match window_mode {
                    Some(Mode::Sliding) => WindowMode::Sliding,
                    Some(Mode::Expanding) => WindowMode::Expanding,
                    None => config.taqr.window_mode,
                },
                max_pivots_per_update: config.taqr.max_pivots_per_update,
            };
            let run = run_taqr_with(&design, obs.values(), obs.timestamps(), &taus, n_init, n_full, opts)?;
            write_quantile_forecast(&out, &run.q_hat, config.tau_precision)?;
            println!("wrote {} ({} rows)", out.display(), run.q_hat.nrows());
            if let Some(dir) = beta_dir {
                let prec = config.tau_precision;
                for (tau, records) in taus.as_slice().iter().zip(&run.beta) {
                    write_beta_history(dir.join(format!("beta_tau_{tau:.prec$}.csv")), *tau, records)?;
                }
                println!("wrote {} coefficient files to {}", taus.len(), dir.display());
            }
        }
        Command::Score {
            common,
            data,
            forecast,
            ensemble,
            out,
        } => {
            let config = load_config(&common)?;
            let (ens, obs, qf) = aligned(&data, &forecast)?;
            let cleaned = clean_nans(&obs, &qf)?;
            let members = match ensemble {
                EnsembleSource::Forecast => cleaned.forecast.as_ensemble(config.tau_precision)?,
                EnsembleSource::Data => {
                    let m = ens.select(&cleaned.kept);
                    if (0..m.nrows()).any(|i| m.is_missing(i)) {
                        return Err(Failure::Usage("ensemble members are missing on scored rows".into()));
                    }
                    m
                }
            };
            let report = calculate_scores(cleaned.obs.values(), &cleaned.forecast, &members, &config.scoring)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
            match out {
                Some(path) => {
                    write_text(&path, &json)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{json}"),
            }
        }
        Command::Pipeline {
            common,
            data_source,
            output_dir,
        } => {
            let mut config = load_config(&common)?;
            if let Some(src) = data_source {
                config.data_source = src;
            }
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let result = run_nabqr_pipeline(&config)?;
            let s = &result.scores;
            println!(
                "source {}: {} scored rows",
                if config.data_source == SIMULATE {
                    SIMULATE
                } else {
                    &config.data_source
                },
                s.report.n_effective
            );
            println!(
                "mae {:.6} (raw {:.6}, ratio {:.3})",
                s.report.mae, s.baseline.mae, s.improvement.mae_ratio
            );
            println!(
                "qs  {:.6} (raw {:.6}, ratio {:.3})",
                s.report.qs, s.baseline.qs, s.improvement.qs_ratio
            );
            println!("crps {:.6}  vars {:.6}", s.report.crps, s.report.vars);
            println!(
                "{} artifacts in {}",
                result.artifacts.len(),
                config.output_dir.display()
            );
        }
        Command::Plot {
            common,
            data,
            forecast,
            out,
        } => {
            let config = load_config(&common)?;
            let (_, obs, qf) = aligned(&data, &forecast)?;
            let (svg, csv) = emit_fan_chart(&obs, &qf, &out, config.tau_precision)?;
            println!("wrote {} and {}", svg.display(), csv.display());
        }
    }
    Ok(())
}

/// Data rows matching the forecast timestamps, in forecast order.
fn aligned(
    data: &Path,
    forecast: &Path,
) -> Result<(EnsembleMatrix, ObservationSeries, QuantileForecastMatrix), Failure> {
    let (ens, obs) = load_dataset::<f64>(data, &DatasetSchema::default())?;
    let qf = load_quantile_forecast::<f64>(forecast)?;
    let index: HashMap<i64, usize> = obs.timestamps().iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let rows = qf
        .timestamps()
        .iter()
        .map(|t| index.get(t).copied())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Failure::Usage("forecast timestamps are missing from the data file".into()))?;
    Ok((ens.select(&rows), obs.select(&rows), qf))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}
