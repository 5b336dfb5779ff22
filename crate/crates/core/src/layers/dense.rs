use serde::{Deserialize, Serialize};

use super::dropout::DropoutSpec;
use super::layer_norm::{layer_norm_on, LayerNormNodes};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, RngStream, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Linear,
}

/// Fully connected layer `activation(w x + b)`; `w` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Matrix,
    pub activation: Activation,
}

impl DenseParams {
    pub fn new(w: Matrix, b: Matrix, activation: Activation) -> Result<Self> {
        if b.shape() != (w.rows(), 1) {
            return Err(Error::Shape {
                op: "dense bias",
                left: w.shape(),
                right: b.shape(),
            });
        }
        Ok(DenseParams { w, b, activation })
    }

    pub fn forward(&self, x: &[f64], drop: &DropoutSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        let x = tape.leaf(Matrix::column(x));
        let mask = drop.mask(self.w.rows(), 1, rng);
        let out = dense_on(&mut tape, w, b, x, self.activation, None, mask.as_ref())?;
        Ok(tape.value(out).data().to_vec())
    }
}

pub fn activate(tape: &mut Tape, x: NodeId, activation: Activation) -> NodeId {
    match activation {
        Activation::LeakyRelu { alpha } => tape.leaky_relu(x, alpha),
        Activation::Linear => x,
    }
}

/// Records `mask * activation(norm(w x + b))` on the tape. Layer
/// normalisation, when given, acts on the pre-activation.
pub fn dense_on(
    tape: &mut Tape,
    w: NodeId,
    b: NodeId,
    x: NodeId,
    activation: Activation,
    norm: Option<LayerNormNodes>,
    mask: Option<&Matrix>,
) -> Result<NodeId> {
    let lin = tape.matmul(w, x)?;
    let mut pre = tape.add_column(lin, b)?;
    if let Some(norm) = norm {
        pre = layer_norm_on(tape, pre, norm)?;
    }
    let mut out = activate(tape, pre, activation);
    if let Some(mask) = mask {
        let m = tape.leaf(mask.clone());
        out = tape.hadamard(out, m)?;
    }
    Ok(out)
}
