//! Recurrent ensemble corrector.
//!
//! Each timestep's ensemble is sorted ascending and fed, together with the
//! preceding `L − 1` timesteps, through one LSTM layer whose final hidden
//! state is mapped linearly to one value per quantile level. All levels are
//! trained jointly on a single multi-quantile pinball loss (Huberized around
//! the kink so that gradients are well defined) with Adam. The sorted outputs
//! form the corrected ensemble that TAQR later uses as its regression basis.

mod lstm;

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sort_ascending, EnsembleMatrix, ObservationSeries, QuantileLevels};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::simulator::Rng;
use crate::taqr::pinball;
use crate::Real;

use lstm::{Scaling, Shape, Tape};

/// Lagged sorted-ensemble windows with their targets.
///
/// Window `i` predicts row `t = L + i` and holds rows `t − L + 1 ..= t`, so
/// it only sees forecasts issued for times up to its own target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindowSet<T = f64> {
    inputs: Vec<T>,
    targets: Vec<T>,
    valid: Vec<bool>,
    timesteps: usize,
    width: usize,
    split_index: usize,
}

impl<T: Real> TrainingWindowSet<T> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Windows `0..split_index` form the training region.
    pub fn split_index(&self) -> usize {
        self.split_index
    }

    /// Row of the source series that window `i` predicts.
    pub fn target_row(&self, i: usize) -> usize {
        self.timesteps + i
    }

    /// `L×F` row-major block of sorted ensemble values.
    pub fn window(&self, i: usize) -> &[T] {
        let n = self.timesteps * self.width;
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> T {
        self.targets[i]
    }

    /// False when the window or its target contains a missing value.
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    /// Usable windows of the training region.
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.split_index).filter(|&i| self.valid[i]).collect()
    }
}

fn sorted_windows<T: Real>(x: &EnsembleMatrix<T>, timesteps: usize) -> (Vec<T>, Vec<bool>) {
    let (n, f) = (x.nrows() - timesteps, x.n_members());
    let mut sorted_rows = Vec::with_capacity(x.nrows() * f);
    for r in 0..x.nrows() {
        let mut row = x.row(r).to_vec();
        sort_ascending(&mut row);
        sorted_rows.extend(row);
    }
    let mut inputs = Vec::with_capacity(n * timesteps * f);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let first = i + 1;
        inputs.extend_from_slice(&sorted_rows[first * f..(first + timesteps) * f]);
        valid.push((first..first + timesteps).all(|r| !x.is_missing(r)));
    }
    (inputs, valid)
}

/// Builds the `T − L` windows and the chronological train split
/// `floor(train_frac · (T − L))`.
pub fn build_training_windows<T: Real>(
    x: &EnsembleMatrix<T>,
    y: &ObservationSeries<T>,
    timesteps: usize,
    train_frac: f64,
) -> Result<TrainingWindowSet<T>> {
    if timesteps == 0 {
        return Err(Error::Config("timesteps must be at least 1".into()));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    if x.nrows() != y.len() || x.timestamps() != y.timestamps() {
        return Err(Error::Arity("ensembles and observations are not aligned".into()));
    }
    if x.nrows() <= timesteps {
        return Err(Error::Arity(format!(
            "{} rows cannot fill a window of {timesteps} timesteps",
            x.nrows()
        )));
    }
    let (inputs, mut valid) = sorted_windows(x, timesteps);
    let targets: Vec<T> = y.values()[timesteps..].to_vec();
    for (i, v) in valid.iter_mut().enumerate() {
        *v = *v && !y.is_missing(timesteps + i);
    }
    let n = targets.len();
    Ok(TrainingWindowSet {
        inputs,
        targets,
        valid,
        timesteps,
        width: x.n_members(),
        split_index: (train_frac * n as f64).floor() as usize,
    })
}

/// Pinball loss with the kink replaced by a parabola of half-width `delta`:
/// `w(u)·u²/(2δ)` for `|u| ≤ δ` and `w(u)·(|u| − δ/2)` beyond, where `w` is
/// `tau` above the quantile and `1 − tau` below.
pub fn smoothed_pinball<T: Real>(y: T, q: T, tau: T, delta: T) -> T {
    let u = y - q;
    let w = if u >= T::zero() { tau } else { T::one() - tau };
    let a = u.abs();
    if a <= delta {
        w * u * u / (T::of(2.0) * delta)
    } else {
        w * (a - delta / T::of(2.0))
    }
}

/// Derivative of [`smoothed_pinball`] with respect to `q`.
fn smoothed_pinball_dq<T: Real>(y: T, q: T, tau: T, delta: T) -> T {
    let u = y - q;
    let w = if u >= T::zero() { tau } else { T::one() - tau };
    let du = if u.abs() <= delta { u / delta } else { u.signum() };
    -w * du
}

/// Mean pinball loss over every (row, level) pair.
pub fn multiquantile_pinball_loss<T: Real>(pred: &Matrix<T>, y: &[T], taus: &QuantileLevels) -> Result<T> {
    if pred.nrows() != y.len() || pred.ncols() != taus.len() {
        return Err(Error::Arity(format!(
            "{}×{} predictions for {} targets and {} levels",
            pred.nrows(),
            pred.ncols(),
            y.len(),
            taus.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Arity("no predictions".into()));
    }
    let taus: Vec<T> = taus.as_slice().iter().map(|&t| T::of(t)).collect();
    let total: T = pred
        .rows_iter()
        .zip(y)
        .map(|(row, &yv)| row.iter().zip(&taus).map(|(&q, &t)| pinball(yv, q, t)).sum::<T>())
        .sum();
    Ok(total / T::of((y.len() * taus.len()) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectorConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Training regions of at most this many windows use full-batch steps.
    pub full_batch_max: usize,
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 64,
            full_batch_max: 256,
            smoothing: 1e-3,
            seed: 0,
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing must be positive, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// Trained (or freshly initialized) network.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorModel<T = f64> {
    shape: Shape,
    timesteps: usize,
    taus: QuantileLevels,
    scaling: Scaling<T>,
    params: Vec<T>,
}

fn mean_sd<T: Real>(values: impl Iterator<Item = T>) -> (T, T) {
    let v: Vec<T> = values.collect();
    if v.is_empty() {
        return (T::zero(), T::one());
    }
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let sd = var.sqrt();
    (mean, if sd > T::of(1e-6) { sd } else { T::one() })
}

fn empirical_quantile<T: Real>(sorted: &[T], tau: f64) -> T {
    let pos = tau * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + T::of(pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Named parameter block: name, flat index range, tensor shape.
pub type ParamBlock = (&'static str, Range<usize>, Vec<usize>);

impl<T: Real> CorrectorModel<T> {
    /// Seeded starting point of training.
    ///
    /// Inputs and outputs are standardized with the training region's mean
    /// and standard deviation; recurrent weights are uniform in `±1/√H`, the
    /// forget-gate bias is 1, head weights are uniform in `±0.1/√H` and the
    /// head bias starts at the standardized empirical quantiles of the
    /// training targets.
    pub fn initialize(data: &TrainingWindowSet<T>, taus: &QuantileLevels, config: &CorrectorConfig) -> Result<Self> {
        config.validate()?;
        let train = data.train_indices();
        if train.is_empty() {
            return Err(Error::Arity("training region has no usable windows".into()));
        }
        let (input_shift, input_scale) = mean_sd(train.iter().flat_map(|&i| data.window(i).iter().copied()));
        let (output_shift, output_scale) = mean_sd(train.iter().map(|&i| data.target(i)));
        let shape = Shape {
            hidden: config.hidden,
            width: data.width(),
            outputs: taus.len(),
        };
        let mut rng = Rng::new(config.seed ^ 0x6c73_746d_636f_7272);
        let mut params = vec![T::zero(); shape.n_params()];
        let a = 1.0 / (config.hidden as f64).sqrt();
        for range in [shape.w_input(), shape.w_hidden()] {
            for p in &mut params[range.0..range.1] {
                *p = T::of(a * (2.0 * rng.uniform() - 1.0));
            }
        }
        let (bg, _) = shape.b_gates();
        for k in 0..config.hidden {
            params[bg + config.hidden + k] = T::one();
        }
        let (h0, h1) = shape.w_head();
        for p in &mut params[h0..h1] {
            *p = T::of(0.1 * a * (2.0 * rng.uniform() - 1.0));
        }
        let mut y: Vec<T> = train.iter().map(|&i| data.target(i)).collect();
        sort_ascending(&mut y);
        let (b0, _) = shape.b_head();
        for (q, &tau) in taus.as_slice().iter().enumerate() {
            params[b0 + q] = (empirical_quantile(&y, tau) - output_shift) / output_scale;
        }
        Ok(Self {
            shape,
            timesteps: data.timesteps(),
            taus: taus.clone(),
            scaling: Scaling {
                input_shift,
                input_scale,
                output_shift,
                output_scale,
            },
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.shape.hidden
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn input_width(&self) -> usize {
        self.shape.width
    }

    pub fn taus(&self) -> &QuantileLevels {
        &self.taus
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// `w_input`, `w_hidden`, `b_gates`, `w_head`, `b_head` in storage order.
    pub fn layout(&self) -> Vec<ParamBlock> {
        let s = self.shape;
        let (h, f, q) = (s.hidden, s.width, s.outputs);
        let r = |(a, b): (usize, usize)| a..b;
        vec![
            ("w_input", r(s.w_input()), vec![4 * h, f]),
            ("w_hidden", r(s.w_hidden()), vec![4 * h, h]),
            ("b_gates", r(s.b_gates()), vec![4 * h]),
            ("w_head", r(s.w_head()), vec![q, h]),
            ("b_head", r(s.b_head()), vec![q]),
        ]
    }

    /// Unsorted per-level outputs for one `L×F` window.
    pub fn predict_window(&self, window: &[T]) -> Result<Vec<T>> {
        if window.len() != self.timesteps * self.shape.width {
            return Err(Error::Arity(format!(
                "window of {} values, expected {}×{}",
                window.len(),
                self.timesteps,
                self.shape.width
            )));
        }
        let mut tape = Tape::new(self.shape, self.timesteps);
        lstm::forward(self.shape, &self.params, &self.scaling, window, &mut tape);
        Ok(tape.output().to_vec())
    }

    fn check_data(&self, data: &TrainingWindowSet<T>) -> Result<()> {
        if data.width() != self.shape.width || data.timesteps() != self.timesteps {
            return Err(Error::Arity(format!(
                "windows are {}×{}, model expects {}×{}",
                data.timesteps(),
                data.width(),
                self.timesteps,
                self.shape.width
            )));
        }
        Ok(())
    }

    /// Mean smoothed multi-quantile loss over the windows `idx`.
    pub fn loss(&self, data: &TrainingWindowSet<T>, idx: &[usize], smoothing: T) -> Result<T> {
        self.check_data(data)?;
        let taus = self.tau_values();
        let mut tape = Tape::new(self.shape, self.timesteps);
        let mut total = T::zero();
        for &i in idx {
            lstm::forward(self.shape, &self.params, &self.scaling, data.window(i), &mut tape);
            let y = data.target(i);
            for (&q, &tau) in tape.output().iter().zip(&taus) {
                total += smoothed_pinball(y, q, tau, smoothing);
            }
        }
        Ok(total / T::of((idx.len().max(1) * taus.len()) as f64))
    }

    /// Loss and its gradient with respect to [`Self::params`].
    pub fn loss_and_gradient(&self, data: &TrainingWindowSet<T>, idx: &[usize], smoothing: T) -> Result<(T, Vec<T>)> {
        self.check_data(data)?;
        let taus = self.tau_values();
        let norm = T::of((idx.len().max(1) * taus.len()) as f64);
        let mut tape = Tape::new(self.shape, self.timesteps);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut d_out = vec![T::zero(); taus.len()];
        let mut total = T::zero();
        for &i in idx {
            lstm::forward(self.shape, &self.params, &self.scaling, data.window(i), &mut tape);
            let y = data.target(i);
            for (q, (&pred, &tau)) in tape.output().iter().zip(&taus).enumerate() {
                total += smoothed_pinball(y, pred, tau, smoothing);
                d_out[q] = smoothed_pinball_dq(y, pred, tau, smoothing) / norm;
            }
            lstm::backward(self.shape, &self.params, &self.scaling, &tape, &d_out, &mut grad);
        }
        Ok((total / norm, grad))
    }

    fn tau_values(&self) -> Vec<T> {
        self.taus.as_slice().iter().map(|&t| T::of(t)).collect()
    }
}

/// Outcome of [`train_corrector`].
#[derive(Debug, Clone)]
pub struct TrainedCorrector<T = f64> {
    /// Final parameters, or the initial ones if training ended with a higher
    /// training-region loss than it started with.
    pub model: CorrectorModel<T>,
    /// Training-region loss of the initialization.
    pub initial_loss: f64,
    /// Training-region loss of `model`.
    pub final_loss: f64,
    /// Mean minibatch loss of each epoch, evaluated before each step.
    pub epoch_losses: Vec<f64>,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
    lr: T,
}

impl<T: Real> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            lr: T::of(lr),
        }
    }

    fn apply(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let eps = T::of(Self::EPS);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Trains on the windows before the split, deterministically given the seed.
pub fn train_corrector<T: Real>(
    data: &TrainingWindowSet<T>,
    taus: &QuantileLevels,
    config: &CorrectorConfig,
) -> Result<TrainedCorrector<T>> {
    let mut model = CorrectorModel::initialize(data, taus, config)?;
    let mut order = data.train_indices();
    let smoothing = T::of(config.smoothing);
    let initial = model.loss(data, &order, smoothing)?;
    if !initial.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            reason: "initial loss is not finite".into(),
        });
    }
    let init_params = model.params.clone();
    let mut adam = Adam::new(model.n_params(), config.learning_rate);
    let mut rng = Rng::new(config.seed ^ 0x7368_7566_666c_6521);
    let batch = if order.len() <= config.full_batch_max {
        order.len()
    } else {
        config.batch_size
    };
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if batch < order.len() {
            for i in (1..order.len()).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
        }
        let mut running = T::zero();
        for chunk in order.chunks(batch) {
            let (loss, grad) = model.loss_and_gradient(data, chunk, smoothing)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    reason: "loss or gradient is not finite".into(),
                });
            }
            running += loss * T::of(chunk.len() as f64);
            adam.apply(&mut model.params, &grad);
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                epoch,
                reason: "parameters are not finite".into(),
            });
        }
        epoch_losses.push((running / T::of(order.len() as f64)).as_f64());
    }
    let mut final_loss = initial;
    if config.epochs > 0 {
        final_loss = model.loss(data, &data.train_indices(), smoothing)?;
        if !final_loss.is_finite() {
            return Err(Error::Training {
                epoch: config.epochs,
                reason: "loss is not finite".into(),
            });
        }
        if final_loss > initial {
            model.params = init_params;
            final_loss = initial;
        }
    }
    Ok(TrainedCorrector {
        model,
        initial_loss: initial.as_f64(),
        final_loss: final_loss.as_f64(),
        epoch_losses,
    })
}

/// `(T − L)×Q` corrected ensemble, each row sorted ascending. Row `i` belongs
/// to timestamp `L + i`; windows touching a missing row give a missing row.
pub fn correct_ensembles<T: Real>(model: &CorrectorModel<T>, x: &EnsembleMatrix<T>) -> Result<EnsembleMatrix<T>> {
    if x.n_members() != model.input_width() {
        return Err(Error::Arity(format!(
            "{} ensemble members, model expects {}",
            x.n_members(),
            model.input_width()
        )));
    }
    let l = model.timesteps();
    if x.nrows() <= l {
        return Err(Error::Arity(format!(
            "{} rows cannot fill a window of {l} timesteps",
            x.nrows()
        )));
    }
    let (inputs, valid) = sorted_windows(x, l);
    let n = x.nrows() - l;
    let q = model.taus().len();
    let block = l * model.input_width();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map_init(
            || Tape::new(model.shape, l),
            |tape, i| {
                if !valid[i] {
                    return vec![T::nan(); q];
                }
                lstm::forward(
                    model.shape,
                    &model.params,
                    &model.scaling,
                    &inputs[i * block..(i + 1) * block],
                    tape,
                );
                let mut row = tape.output().to_vec();
                sort_ascending(&mut row);
                row
            },
        )
        .collect();
    let values = Matrix::from_vec(n, q, rows.into_iter().flatten().collect());
    let labels = model
        .taus()
        .as_slice()
        .iter()
        .map(|&t| QuantileLevels::label(t, label_precision(model.taus())))
        .collect();
    EnsembleMatrix::new(values, labels, x.timestamps()[l..].to_vec())
}

/// Smallest number of decimals that tells the levels apart, at least two.
pub fn label_precision(taus: &QuantileLevels) -> usize {
    (2..=10)
        .find(|&p| {
            let labels: Vec<String> = taus.as_slice().iter().map(|&t| format!("{t:.p$}")).collect();
            labels.windows(2).all(|w| w[0] != w[1])
                && taus
                    .as_slice()
                    .iter()
                    .zip(&labels)
                    .all(|(&t, l)| (l.parse::<f64>().unwrap() - t).abs() < 1e-12)
        })
        .unwrap_or(10)
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    hidden: usize,
    timesteps: usize,
    input_width: usize,
    taus: Vec<f64>,
    input_shift: f64,
    input_scale: f64,
    output_shift: f64,
    output_scale: f64,
    tensors: Vec<Tensor>,
}

const FORMAT: &str = "nabqr-corrector-v1";

impl<T: Real> CorrectorModel<T> {
    /// Single JSON document with shape-tagged flat tensors.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: FORMAT.into(),
            hidden: self.shape.hidden,
            timesteps: self.timesteps,
            input_width: self.shape.width,
            taus: self.taus.as_slice().to_vec(),
            input_shift: self.scaling.input_shift.as_f64(),
            input_scale: self.scaling.input_scale.as_f64(),
            output_shift: self.scaling.output_shift.as_f64(),
            output_scale: self.scaling.output_scale.as_f64(),
            tensors: self
                .layout()
                .into_iter()
                .map(|(name, range, shape)| Tensor {
                    name: name.into(),
                    shape,
                    data: self.params[range].iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format != FORMAT {
            return Err(Error::Schema(format!("unknown model format `{}`", doc.format)));
        }
        let shape = Shape {
            hidden: doc.hidden,
            width: doc.input_width,
            outputs: doc.taus.len(),
        };
        let mut model = Self {
            shape,
            timesteps: doc.timesteps,
            taus: QuantileLevels::new(doc.taus)?,
            scaling: Scaling {
                input_shift: T::of(doc.input_shift),
                input_scale: T::of(doc.input_scale),
                output_shift: T::of(doc.output_shift),
                output_scale: T::of(doc.output_scale),
            },
            params: vec![T::zero(); shape.n_params()],
        };
        let layout = model.layout();
        if doc.tensors.len() != layout.len() {
            return Err(Error::Schema(format!(
                "expected {} tensors, found {}",
                layout.len(),
                doc.tensors.len()
            )));
        }
        for ((name, range, shape), t) in layout.into_iter().zip(doc.tensors) {
            if t.name != name || t.shape != shape || t.data.len() != range.len() {
                return Err(Error::Schema(format!(
                    "tensor `{}` does not match `{name}` {shape:?}",
                    t.name
                )));
            }
            for (p, v) in model.params[range].iter_mut().zip(t.data) {
                *p = T::of(v);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// `epoch,loss` with epoch 0 holding the loss before training.
pub fn write_loss_history(path: impl AsRef<Path>, trained: &TrainedCorrector<impl Real>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    w.write_record(["0".to_string(), format!("{}", trained.initial_loss)])?;
    for (e, l) in trained.epoch_losses.iter().enumerate() {
        w.write_record([(e + 1).to_string(), format!("{l}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::hourly_timestamps;

    fn toy(n: usize, m: usize) -> (EnsembleMatrix, ObservationSeries) {
        let mut rng = Rng::new(1);
        let v = Matrix::from_fn(n, m, |_, _| rng.uniform());
        let y: Vec<f64> = (0..n).map(|i| v.row(i).iter().sum::<f64>() / m as f64).collect();
        (
            EnsembleMatrix::with_default_labels(v, hourly_timestamps(n)).unwrap(),
            ObservationSeries::hourly(y),
        )
    }

    #[test]
    fn window_counts_and_split() {
        let (x, y) = toy(10, 2);
        let w = build_training_windows(&x, &y, 3, 0.7).unwrap();
        assert_eq!(w.len(), 7);
        assert_eq!(w.split_index(), 4);
        assert!(build_training_windows(&x, &y, 10, 0.7).is_err());
        assert!(build_training_windows(&x, &y, 3, 1.0).is_err());
    }

    #[test]
    fn windows_hold_sorted_rows_up_to_target() {
        let (x, y) = toy(12, 3);
        let w = build_training_windows(&x, &y, 4, 0.5).unwrap();
        for i in 0..w.len() {
            let t = w.target_row(i);
            assert_eq!(w.target(i), y.values()[t]);
            let block = w.window(i);
            for s in 0..4 {
                let mut row = x.row(t - 3 + s).to_vec();
                sort_ascending(&mut row);
                assert_eq!(&block[s * 3..(s + 1) * 3], &row[..]);
            }
        }
    }

    #[test]
    fn missing_values_invalidate_windows() {
        let (x, mut y) = toy(12, 2);
        let mut v = y.values().to_vec();
        v[6] = f64::NAN;
        y = ObservationSeries::hourly(v);
        let w = build_training_windows(&x, &y, 3, 0.5).unwrap();
        let invalid: Vec<usize> = (0..w.len()).filter(|&i| !w.is_valid(i)).collect();
        assert_eq!(invalid, vec![3]);
    }

    #[test]
    fn loss_examples() {
        let taus = QuantileLevels::new(vec![0.1, 0.9]).unwrap();
        let pred = Matrix::from_rows(&[[0.0, 2.0]]);
        assert!((multiquantile_pinball_loss(&pred, &[1.0_f64], &taus).unwrap() - 0.1).abs() < 1e-15);
        let exact = Matrix::from_rows(&[[1.0, 1.0]]);
        assert_eq!(multiquantile_pinball_loss(&exact, &[1.0], &taus).unwrap(), 0.0);
        assert!(multiquantile_pinball_loss(&exact, &[1.0, 2.0], &taus).is_err());
    }

    #[test]
    fn smoothed_loss_is_continuous_and_close_to_exact() {
        let d = 1e-3_f64;
        for tau in [0.1, 0.5, 0.9] {
            for u in [-1.0, -d, -d / 2.0, 0.0, d / 2.0, d, 1.0] {
                let s = smoothed_pinball(u, 0.0, tau, d);
                assert!((s - pinball(u, 0.0, tau)).abs() <= d / 2.0 + 1e-15);
            }
            let left = smoothed_pinball(d * (1.0 - 1e-12), 0.0, tau, d);
            let right = smoothed_pinball(d * (1.0 + 1e-12), 0.0, tau, d);
            assert!((left - right).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (x, y) = toy(60, 3);
        let w = build_training_windows(&x, &y, 5, 0.7).unwrap();
        let taus = QuantileLevels::new(vec![0.25, 0.75]).unwrap();
        let cfg = CorrectorConfig {
            epochs: 0,
            hidden: 4,
            ..CorrectorConfig::default()
        };
        let trained = train_corrector(&w, &taus, &cfg).unwrap();
        assert_eq!(trained.model, CorrectorModel::initialize(&w, &taus, &cfg).unwrap());
        assert!(trained.epoch_losses.is_empty());
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = toy(40, 2);
        let w = build_training_windows(&x, &y, 4, 0.7).unwrap();
        let taus = QuantileLevels::new(vec![0.1, 0.5, 0.9]).unwrap();
        let cfg = CorrectorConfig {
            hidden: 3,
            ..CorrectorConfig::default()
        };
        let m = CorrectorModel::initialize(&w, &taus, &cfg).unwrap();
        let back = CorrectorModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(CorrectorModel::<f64>::from_json("{\"format\":\"other\"}").is_err());
    }

    #[test]
    fn label_precision_separates_levels() {
        assert_eq!(label_precision(&QuantileLevels::new(vec![0.05, 0.5, 0.95]).unwrap()), 2);
        assert_eq!(label_precision(&QuantileLevels::new(vec![0.025, 0.5]).unwrap()), 3);
    }
}
