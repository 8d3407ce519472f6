//! Ensemble correction and time-adaptive quantile regression.
//!
//! Raw ensemble forecasts are corrected by a small recurrent network trained
//! on a multi-quantile pinball loss ([`corrector`]); the corrected columns
//! then serve as the regression basis of a quantile regression that is kept
//! optimal on a sliding window by warm-started simplex pivots ([`taqr`]).
//! [`scoring`] evaluates the result, [`simulator`] produces synthetic wind
//! power data and [`pipeline`] strings the stages together.
//!
//! Numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! `*F64`/`*F32` aliases below name the concrete instantiations.

pub mod corrector;
pub mod data;
pub mod error;
pub mod matrix;
pub mod pipeline;
mod real;
pub mod scoring;
pub mod simulator;
pub mod taqr;

pub use data::{
    clean_nans, load_dataset, DatasetSchema, EnsembleMatrix, ObservationSeries, QuantileForecastMatrix, QuantileLevels,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use real::Real;
pub use taqr::{QrSolution, TaqrState};

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type EnsembleMatrixF64 = EnsembleMatrix<f64>;
pub type EnsembleMatrixF32 = EnsembleMatrix<f32>;
pub type ObservationSeriesF64 = ObservationSeries<f64>;
pub type ObservationSeriesF32 = ObservationSeries<f32>;
pub type QuantileForecastMatrixF64 = QuantileForecastMatrix<f64>;
pub type QuantileForecastMatrixF32 = QuantileForecastMatrix<f32>;
pub type QrSolutionF64 = QrSolution<f64>;
pub type QrSolutionF32 = QrSolution<f32>;
pub type TaqrStateF64 = TaqrState<f64>;
pub type TaqrStateF32 = TaqrState<f32>;
pub type CorrectorModelF64 = corrector::CorrectorModel<f64>;
pub type CorrectorModelF32 = corrector::CorrectorModel<f32>;
