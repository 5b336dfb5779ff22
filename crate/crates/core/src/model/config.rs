use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::spectral::{EVAL_ITERS, TRAIN_ITERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    Layer,
    Spectral,
}

impl NormMode {
    pub const ALL: [NormMode; 3] = [NormMode::None, NormMode::Layer, NormMode::Spectral];

    pub fn name(self) -> &'static str {
        match self {
            NormMode::None => "none",
            NormMode::Layer => "layer",
            NormMode::Spectral => "spectral",
        }
    }
}

/// How often the recurrent (candidate-update) dropout mask is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentMask {
    PerStep,
    PerSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lstm_units: Vec<usize>,
    /// Hidden dense widths followed by the 2-wide (mean, log-variance) head.
    pub dense_units: Vec<usize>,
    pub dropout_rate: f64,
    pub norm_mode: NormMode,
    pub leaky_alpha: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub seed: u64,
    pub layer_norm_eps: f64,
    pub recurrent_mask: RecurrentMask,
    pub spectral_train_iters: usize,
    pub spectral_eval_iters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lstm_units: vec![20, 20, 10],
            dense_units: vec![10, 10, 6, 2],
            dropout_rate: 0.02,
            norm_mode: NormMode::None,
            leaky_alpha: 0.3,
            lookback: 12,
            horizon: 1,
            seed: 0,
            layer_norm_eps: crate::layers::layer_norm::DEFAULT_EPS,
            recurrent_mask: RecurrentMask::PerStep,
            spectral_train_iters: TRAIN_ITERS,
            spectral_eval_iters: EVAL_ITERS,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for whole-model gradient checks.
    pub fn reduced(norm_mode: NormMode) -> Self {
        ModelConfig {
            lstm_units: vec![3],
            dense_units: vec![3, 2],
            lookback: 4,
            dropout_rate: 0.1,
            norm_mode,
            ..ModelConfig::default()
        }
    }

    pub fn with_norm(mut self, norm_mode: NormMode) -> Self {
        self.norm_mode = norm_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) {
            return fail(format!("lstm_units must be non-empty and positive, got {:?}", self.lstm_units));
        }
        if self.dense_units.len() < 2 || self.dense_units.contains(&0) {
            return fail(format!(
                "dense_units needs at least one hidden layer plus the head, got {:?}",
                self.dense_units
            ));
        }
        if self.dense_units.last() != Some(&2) {
            return fail(format!("final dense width must be 2 (mean, log-variance), got {:?}", self.dense_units));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.leaky_alpha.is_finite() && self.leaky_alpha >= 0.0) {
            return fail(format!("leaky_alpha must be finite and non-negative, got {}", self.leaky_alpha));
        }
        if self.lookback == 0 || self.horizon == 0 {
            return fail("lookback and horizon must be at least 1".into());
        }
        if self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive".into());
        }
        if self.spectral_train_iters == 0 || self.spectral_eval_iters == 0 {
            return fail("spectral iteration counts must be at least 1".into());
        }
        if self.norm_mode == NormMode::Layer {
            let hidden_dense = &self.dense_units[..self.dense_units.len() - 1];
            if self.lstm_units.iter().chain(hidden_dense).any(|&w| w < 2) {
                return fail("layer normalisation needs every normalised layer to be at least 2 wide".into());
            }
        }
        Ok(())
    }

    /// Width of the penultimate (feature) layer.
    pub fn feature_width(&self) -> usize {
        self.dense_units[self.dense_units.len() - 2]
    }
}
