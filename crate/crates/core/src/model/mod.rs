//! The stacked LSTM forecaster with a (mean, log-variance) head.
//!
//! Windows of scaled flow are fed one value per time step through the LSTM
//! stack; every LSTM layer hands its full hidden sequence to the next one and
//! the final hidden state of the last layer enters the dense stack. The
//! second-to-last dense layer's output is exposed as the feature vector.

mod checkpoint;
mod config;

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
pub use config::{ModelConfig, NormMode, RecurrentMask};

use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::layers::{
    dense_on, init_params, lstm_step, power_iteration, Activation, DropoutMode, DropoutSpec, Gate, InitKind,
    LayerNormNodes, LstmNodes, LstmParams, LstmStateNodes, SpectralState,
};
use crate::layers::layer_norm::layer_norm_on;
use crate::numerics::{Matrix, NodeId, RngStream, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    Train,
    Mc,
    Deterministic,
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Lstm,
    LstmNorm,
    Dense,
    DenseNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
    /// Divided by its spectral norm in the forward pass.
    pub spectral: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct LstmLayer {
    weights: [usize; 4],
    biases: [usize; 4],
    norm: Option<(usize, usize)>,
    hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    w: usize,
    b: usize,
    norm: Option<(usize, usize)>,
    activation: Activation,
    dropout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Predicted mean, scaled units.
    pub mean: f64,
    /// Predicted log-variance `s`.
    pub log_var: f64,
    /// Penultimate dense output.
    pub features: Vec<f64>,
}

/// Tape handles produced by [`Model::graph`].
#[derive(Debug, Clone, Copy)]
pub struct GraphOutput {
    pub mean: NodeId,
    pub log_var: NodeId,
    pub features: NodeId,
}

/// Parameter leaves on a tape: `raw` are the stored values, `effective` the
/// nodes actually used by the network (raw scaled by `1/sigma` for spectrally
/// normalised weights, identical to `raw` otherwise).
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub raw: Vec<NodeId>,
    pub effective: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Matrix>,
    info: Vec<ParamInfo>,
    spectral: Vec<Option<SpectralState>>,
    lstm: Vec<LstmLayer>,
    dense: Vec<DenseLayer>,
    scaler: Option<Scaler>,
}

impl Model {
    pub fn build(config: ModelConfig, rng: &mut RngStream) -> Result<Model> {
        config.validate()?;
        let mut params = Vec::new();
        let mut info = Vec::new();
        let spectral_mode = config.norm_mode == NormMode::Spectral;
        let layer_mode = config.norm_mode == NormMode::Layer;
        let mut push = |m: Matrix, name: String, group: ParamGroup, spectral: bool| {
            params.push(m);
            info.push(ParamInfo { name, group, spectral });
            params.len() - 1
        };

        let mut lstm = Vec::new();
        let mut input = 1;
        for (l, &hidden) in config.lstm_units.iter().enumerate() {
            let LstmParams { weights, biases } = LstmParams::init(hidden, input, rng);
            let [w0, w1, w2, w3] = weights;
            let [b0, b1, b2, b3] = biases;
            let mut w_idx = [0; 4];
            for (g, w) in Gate::ALL.into_iter().zip([w0, w1, w2, w3]) {
                w_idx[g as usize] = push(w, format!("lstm{l}.w_{}", g.suffix()), ParamGroup::Lstm, spectral_mode);
            }
            let mut b_idx = [0; 4];
            for (g, b) in Gate::ALL.into_iter().zip([b0, b1, b2, b3]) {
                b_idx[g as usize] = push(b, format!("lstm{l}.b_{}", g.suffix()), ParamGroup::Lstm, false);
            }
            let norm = layer_mode.then(|| {
                (
                    push(Matrix::filled(hidden, 1, 1.0), format!("lstm{l}.ln_gamma"), ParamGroup::LstmNorm, false),
                    push(Matrix::zeros(hidden, 1), format!("lstm{l}.ln_beta"), ParamGroup::LstmNorm, false),
                )
            });
            lstm.push(LstmLayer {
                weights: w_idx,
                biases: b_idx,
                norm,
                hidden,
            });
            input = hidden;
        }

        let mut dense = Vec::new();
        let last = config.dense_units.len() - 1;
        for (l, &out) in config.dense_units.iter().enumerate() {
            let is_head = l == last;
            let w = push(
                init_params(out, input, rng, InitKind::GlorotUniform),
                format!("dense{l}.w"),
                ParamGroup::Dense,
                spectral_mode,
            );
            let b = push(init_params(out, 1, rng, InitKind::Zeros), format!("dense{l}.b"), ParamGroup::Dense, false);
            let norm = (layer_mode && !is_head).then(|| {
                (
                    push(Matrix::filled(out, 1, 1.0), format!("dense{l}.ln_gamma"), ParamGroup::DenseNorm, false),
                    push(Matrix::zeros(out, 1), format!("dense{l}.ln_beta"), ParamGroup::DenseNorm, false),
                )
            });
            let activation = if is_head {
                Activation::Linear
            } else {
                Activation::LeakyRelu {
                    alpha: config.leaky_alpha,
                }
            };
            dense.push(DenseLayer {
                w,
                b,
                norm,
                activation,
                dropout: !is_head,
            });
            input = out;
        }

        let spectral = params
            .iter()
            .zip(&info)
            .map(|(p, i)| {
                i.spectral
                    .then(|| SpectralState::new(p.rows(), rng).with_iters(config.spectral_train_iters))
            })
            .collect();

        Ok(Model {
            config,
            params,
            info,
            spectral,
            lstm,
            dense,
            scaler: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.info.iter().position(|i| i.name == name)
    }

    pub fn spectral_states(&self) -> &[Option<SpectralState>] {
        &self.spectral
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Scaler) {
        self.scaler = Some(scaler);
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// Number of scalar parameters per group.
    pub fn group_count(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .zip(&self.info)
            .filter(|(_, i)| i.group == group)
            .map(|(p, _)| p.len())
            .sum()
    }

    /// Indices of parameters belonging to any of `groups`.
    pub fn group_indices(&self, groups: &[ParamGroup]) -> Vec<usize> {
        (0..self.info.len()).filter(|&i| groups.contains(&self.info[i].group)).collect()
    }

    /// All parameters concatenated in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape {
                op: "set_flat_params",
                left: (self.parameter_count(), 1),
                right: (flat.len(), 1),
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Spectral norm estimates for every parameter (1 for unnormalised ones),
    /// computed with `iters` power-iteration steps from the persisted vectors
    /// without updating them.
    pub fn spectral_sigmas(&self, iters: usize) -> Result<Vec<f64>> {
        self.params
            .iter()
            .zip(&self.spectral)
            .map(|(p, s)| match s {
                Some(state) => power_iteration(p, &state.u, iters).map(|(sigma, _)| sigma),
                None => Ok(1.0),
            })
            .collect()
    }

    /// Sigmas used by evaluation forwards.
    pub fn eval_sigmas(&self) -> Result<Vec<f64>> {
        self.spectral_sigmas(self.config.spectral_eval_iters)
    }

    /// Training-time refresh: advances every persisted power-iteration vector
    /// by the configured number of steps and returns the resulting sigmas.
    pub fn refresh_spectral(&mut self) -> Result<Vec<f64>> {
        let iters = self.config.spectral_train_iters;
        let mut sigmas = vec![1.0; self.params.len()];
        for (i, state) in self.spectral.iter_mut().enumerate() {
            if let Some(state) = state {
                let (sigma, u) = power_iteration(&self.params[i], &state.u, iters)?;
                state.u = u;
                sigmas[i] = sigma;
            }
        }
        Ok(sigmas)
    }

    /// Like [`Model::refresh_spectral`] but only the parameters in
    /// `trainable` advance their vectors; frozen normalised weights get their
    /// evaluation sigma and keep their persisted vectors untouched.
    pub fn refresh_spectral_for(&mut self, trainable: &[usize]) -> Result<Vec<f64>> {
        let mut sigmas = vec![1.0; self.params.len()];
        for (i, state) in self.spectral.iter_mut().enumerate() {
            if let Some(state) = state {
                if trainable.contains(&i) {
                    let (sigma, u) = power_iteration(&self.params[i], &state.u, self.config.spectral_train_iters)?;
                    state.u = u;
                    sigmas[i] = sigma;
                } else {
                    sigmas[i] = power_iteration(&self.params[i], &state.u, self.config.spectral_eval_iters)?.0;
                }
            }
        }
        Ok(sigmas)
    }

    /// Records the parameters on `tape`. Normalised weights are divided by
    /// their sigma, which is treated as a constant of the pass.
    pub fn bind(&self, tape: &mut Tape, sigmas: &[f64]) -> BoundParams {
        let mut raw = Vec::with_capacity(self.params.len());
        let mut effective = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let leaf = tape.leaf(p.clone());
            raw.push(leaf);
            if self.info[i].spectral {
                effective.push(tape.scale(leaf, 1.0 / sigmas[i]));
            } else {
                effective.push(leaf);
            }
        }
        BoundParams { raw, effective }
    }

    pub fn dropout_for(&self, mode: ForwardMode) -> DropoutSpec {
        match mode {
            ForwardMode::Train => DropoutSpec::new(self.config.dropout_rate, DropoutMode::Train),
            ForwardMode::Mc => DropoutSpec::new(self.config.dropout_rate, DropoutMode::Mc),
            ForwardMode::Deterministic => DropoutSpec::OFF,
        }
    }

    /// Records the network on `tape`. `inputs` holds one `1 x B` node per
    /// time step; batch members are independent columns.
    pub fn graph(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        inputs: &[NodeId],
        mode: ForwardMode,
        rng: &mut RngStream,
    ) -> Result<GraphOutput> {
        if inputs.len() != self.config.lookback {
            return Err(Error::Shape {
                op: "forward window",
                left: (self.config.lookback, 1),
                right: (inputs.len(), 1),
            });
        }
        let batch = tape.value(inputs[0]).cols();
        let drop = self.dropout_for(mode);
        let eff = &bound.effective;
        let eps = self.config.layer_norm_eps;

        let mut sequence: Vec<NodeId> = inputs.to_vec();
        for (l, layer) in self.lstm.iter().enumerate() {
            let nodes = LstmNodes {
                weights: layer.weights.map(|i| eff[i]),
                biases: layer.biases.map(|i| eff[i]),
            };
            let h0 = tape.leaf(Matrix::zeros(layer.hidden, batch));
            let c0 = tape.leaf(Matrix::zeros(layer.hidden, batch));
            let mut state = LstmStateNodes { h: h0, c: c0 };
            let fixed_mask = match self.config.recurrent_mask {
                RecurrentMask::PerSequence => drop.mask(layer.hidden, batch, rng),
                RecurrentMask::PerStep => None,
            };
            let mut outputs = Vec::with_capacity(sequence.len());
            for &x in &sequence {
                let step_mask = match self.config.recurrent_mask {
                    RecurrentMask::PerStep => drop.mask(layer.hidden, batch, rng),
                    RecurrentMask::PerSequence => fixed_mask.clone(),
                };
                state = lstm_step(tape, &nodes, state, x, step_mask.as_ref())?;
                let out = match layer.norm {
                    Some((gamma, beta)) => layer_norm_on(
                        tape,
                        state.h,
                        LayerNormNodes {
                            gamma: eff[gamma],
                            beta: eff[beta],
                            eps,
                        },
                    )?,
                    None => state.h,
                };
                outputs.push(out);
            }
            let last = *outputs.last().expect("lookback >= 1");
            check_finite(tape, last, || format!("lstm layer {l}"))?;
            sequence = outputs;
        }

        let mut x = *sequence.last().expect("lookback >= 1");
        let mut features = x;
        for (l, layer) in self.dense.iter().enumerate() {
            let norm = layer.norm.map(|(gamma, beta)| LayerNormNodes {
                gamma: eff[gamma],
                beta: eff[beta],
                eps,
            });
            let width = self.params[layer.w].rows();
            let mask = if layer.dropout {
                drop.mask(width, batch, rng)
            } else {
                None
            };
            x = dense_on(tape, eff[layer.w], eff[layer.b], x, layer.activation, norm, mask.as_ref())?;
            check_finite(tape, x, || format!("dense layer {l}"))?;
            if l + 2 == self.dense.len() {
                features = x;
            }
        }
        let mean = tape.row_slice(x, 0)?;
        let log_var = tape.row_slice(x, 1)?;
        Ok(GraphOutput {
            mean,
            log_var,
            features,
        })
    }

    /// Single-window forward pass.
    pub fn forward(&self, window: &[f64], mode: ForwardMode, rng: &mut RngStream) -> Result<ForwardOutput> {
        let mut out = self.forward_batch(&[window], mode, rng)?;
        Ok(out.remove(0))
    }

    /// Forward pass over a batch of windows with evaluation sigmas.
    pub fn forward_batch<W: AsRef<[f64]>>(
        &self,
        windows: &[W],
        mode: ForwardMode,
        rng: &mut RngStream,
    ) -> Result<Vec<ForwardOutput>> {
        let sigmas = self.eval_sigmas()?;
        self.forward_batch_with(&sigmas, windows, mode, rng)
    }

    pub fn forward_batch_with<W: AsRef<[f64]>>(
        &self,
        sigmas: &[f64],
        windows: &[W],
        mode: ForwardMode,
        rng: &mut RngStream,
    ) -> Result<Vec<ForwardOutput>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, sigmas);
        let inputs = input_leaves(&mut tape, windows, self.config.lookback)?;
        let out = self.graph(&mut tape, &bound, &inputs, mode, rng)?;
        let means = tape.value(out.mean);
        let log_vars = tape.value(out.log_var);
        let feats = tape.value(out.features);
        Ok((0..windows.len())
            .map(|j| ForwardOutput {
                mean: means.get(0, j),
                log_var: log_vars.get(0, j),
                features: feats.col_vec(j),
            })
            .collect())
    }
}

/// One `1 x B` leaf per time step, batch members in columns.
pub fn input_leaves<W: AsRef<[f64]>>(tape: &mut Tape, windows: &[W], lookback: usize) -> Result<Vec<NodeId>> {
    for w in windows {
        if w.as_ref().len() != lookback {
            return Err(Error::Shape {
                op: "forward window",
                left: (lookback, 1),
                right: (w.as_ref().len(), 1),
            });
        }
    }
    Ok((0..lookback)
        .map(|t| {
            let row: Vec<f64> = windows.iter().map(|w| w.as_ref()[t]).collect();
            tape.leaf(Matrix::row(&row))
        })
        .collect())
}

fn check_finite(tape: &Tape, id: NodeId, layer: impl FnOnce() -> String) -> Result<()> {
    if tape.value(id).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(layer()))
    }
}
