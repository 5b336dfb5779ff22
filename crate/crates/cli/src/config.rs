use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use uqcast_core::model::{ModelConfig, NormMode, RecurrentMask};
use uqcast_core::training::{AdadeltaConfig, TrainConfig, ValidationMode};

/// Everything a `train` run needs, as one flat JSON object. Missing keys
/// take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lstm_units: Vec<usize>,
    pub dense_units: Vec<usize>,
    pub dropout_rate: f64,
    pub norm_mode: NormMode,
    pub leaky_alpha: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub layer_norm_eps: f64,
    pub recurrent_mask: RecurrentMask,
    pub spectral_train_iters: usize,
    pub spectral_eval_iters: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub log_var_min: f64,
    pub log_var_max: f64,
    pub validation: ValidationMode,

    pub mc_passes: usize,
    pub seed: u64,

    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            lstm_units: m.lstm_units,
            dense_units: m.dense_units,
            dropout_rate: m.dropout_rate,
            norm_mode: m.norm_mode,
            leaky_alpha: m.leaky_alpha,
            lookback: m.lookback,
            horizon: m.horizon,
            layer_norm_eps: m.layer_norm_eps,
            recurrent_mask: m.recurrent_mask,
            spectral_train_iters: m.spectral_train_iters,
            spectral_eval_iters: m.spectral_eval_iters,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.optimizer.lr,
            rho: t.optimizer.rho,
            epsilon: t.optimizer.eps,
            log_var_min: t.log_var_clamp.0,
            log_var_max: t.log_var_clamp.1,
            validation: t.validation,
            mc_passes: uqcast_core::uncertainty::DEFAULT_PASSES,
            seed: 0,
            data: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| uqcast_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| uqcast_core::Error::Config(e.to_string()))
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            lstm_units: self.lstm_units.clone(),
            dense_units: self.dense_units.clone(),
            dropout_rate: self.dropout_rate,
            norm_mode: self.norm_mode,
            leaky_alpha: self.leaky_alpha,
            lookback: self.lookback,
            horizon: self.horizon,
            seed: self.seed,
            layer_norm_eps: self.layer_norm_eps,
            recurrent_mask: self.recurrent_mask,
            spectral_train_iters: self.spectral_train_iters,
            spectral_eval_iters: self.spectral_eval_iters,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdadeltaConfig {
                lr: self.learning_rate,
                rho: self.rho,
                eps: self.epsilon,
            },
            log_var_clamp: (self.log_var_min, self.log_var_max),
            validation: self.validation,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}
