//! Mini-batch training with Adadelta and best-validation model selection.

mod adadelta;
mod check;
mod loss;

pub use adadelta::{adadelta_step, AdadeltaConfig, AdadeltaState};
pub use check::{gradient_check_model, GradCheckReport, FD_STEP};
pub use loss::{nll_loss, nll_on_tape, nll_term, DEFAULT_LOG_VAR_CLAMP};

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{input_leaves, ForwardMode, Model};
use crate::numerics::{Matrix, RngStream, Tape};

/// Forward mode used to score the validation split each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Deterministic,
    /// One dropout-active pass.
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdadeltaConfig,
    pub log_var_clamp: (f64, f64),
    pub validation: ValidationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            optimizer: AdadeltaConfig::default(),
            log_var_clamp: DEFAULT_LOG_VAR_CLAMP,
            validation: ValidationMode::Deterministic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (lo, hi) = self.log_var_clamp;
        if !(lo < hi) {
            return Err(Error::Config(format!("log_var_clamp must satisfy lo < hi, got ({lo}, {hi})")));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.rho) && o.eps > 0.0) {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e - 1].val_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }
}

/// Trains every parameter on the train split, selecting on the val split.
pub fn train(model: Model, data: &WindowedDataset, cfg: &TrainConfig, rng: &mut RngStream) -> Result<(Model, TrainReport)> {
    let all: Vec<usize> = (0..model.params().len()).collect();
    train_on(
        model,
        &data.split_subset(Split::Train),
        &data.split_subset(Split::Val),
        cfg,
        &all,
        rng,
        &mut |_| {},
    )
}

/// Trains the parameters listed in `trainable` (indices into
/// [`Model::params`]) on `train_set`, scoring `val_set` after each epoch and
/// returning the parameters of the best epoch. `progress` sees every epoch.
pub fn train_on(
    mut model: Model,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    cfg: &TrainConfig,
    trainable: &[usize],
    rng: &mut RngStream,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        wall_seconds: 0.0,
    };
    if cfg.epochs == 0 {
        return Ok((model, report));
    }
    if trainable.is_empty() {
        return Err(Error::Config("no trainable parameters".into()));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }

    let mut optimizer = AdadeltaState::new(cfg.optimizer, model.params(), trainable);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Model)> = None;

    for epoch in 1..=cfg.epochs {
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Diverged { epoch },
            other => other,
        };
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&[f64]> = chunk.iter().map(|&k| train_set.windows[k].as_slice()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&k| train_set.targets[k]).collect();
            let (loss, grads) =
                batch_gradients(&mut model, &windows, &targets, trainable, cfg.log_var_clamp, rng).map_err(diverged)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            optimizer.step(model.params_mut(), &grads)?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = evaluate_loss(&model, val_set, cfg.validation, cfg.log_var_clamp, rng).map_err(diverged)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        progress(&record);
        report.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            report.best_epoch = Some(epoch);
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, report))
}

/// Loss and gradients (indexed like [`Model::params`]) for one mini-batch in
/// training mode. Advances the power-iteration vectors of trainable
/// spectrally normalised weights.
fn batch_gradients(
    model: &mut Model,
    windows: &[&[f64]],
    targets: &[f64],
    trainable: &[usize],
    clamp: (f64, f64),
    rng: &mut RngStream,
) -> Result<(f64, Vec<Matrix>)> {
    let sigmas = model.refresh_spectral_for(trainable)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, &sigmas);
    let inputs = input_leaves(&mut tape, windows, model.config().lookback)?;
    let out = model.graph(&mut tape, &bound, &inputs, ForwardMode::Train, rng)?;
    let y = tape.leaf(Matrix::row(targets));
    let loss = nll_on_tape(&mut tape, out.mean, out.log_var, y, clamp)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let per_param = bound
        .raw
        .iter()
        .zip(model.params())
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, per_param))
}

const EVAL_CHUNK: usize = 1024;

/// Mean loss of `model` over a dataset.
pub fn evaluate_loss(
    model: &Model,
    data: &WindowedDataset,
    mode: ValidationMode,
    clamp: (f64, f64),
    rng: &mut RngStream,
) -> Result<f64> {
    let forward_mode = match mode {
        ValidationMode::Deterministic => ForwardMode::Deterministic,
        ValidationMode::Mc => ForwardMode::Mc,
    };
    let sigmas = model.eval_sigmas()?;
    let mut triples = Vec::with_capacity(data.len());
    for (chunk, targets) in data.windows.chunks(EVAL_CHUNK).zip(data.targets.chunks(EVAL_CHUNK)) {
        let out = model.forward_batch_with(&sigmas, chunk, forward_mode, rng)?;
        triples.extend(out.iter().zip(targets).map(|(o, &y)| (y, o.mean, o.log_var)));
    }
    nll_loss(&triples, clamp)
}
