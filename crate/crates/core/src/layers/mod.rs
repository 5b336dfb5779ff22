//! Composable layer primitives: LSTM cell, dense layer, layer and spectral
//! normalisation, inverted dropout and parameter initialisation.

pub mod dense;
pub mod dropout;
pub mod init;
pub mod layer_norm;
pub mod lstm;
pub mod spectral;

pub use dense::{dense_on, Activation, DenseParams};
pub use dropout::{DropoutMode, DropoutSpec};
pub use init::{glorot_bound, init_params, InitKind};
pub use layer_norm::{layer_norm_on, LayerNormNodes, LayerNormParams};
pub use lstm::{lstm_step, Gate, LstmNodes, LstmParams, LstmState, LstmStateNodes};
pub use spectral::{power_iteration, spectral_normalize, SpectralState};
