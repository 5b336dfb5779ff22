use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, Tape};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Learned scale and shift for layer normalisation over `H` features.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub eps: f64,
}

impl LayerNormParams {
    /// Unit scale, zero shift.
    pub fn new(features: usize) -> Self {
        LayerNormParams {
            gamma: Matrix::filled(features, 1, 1.0),
            beta: Matrix::zeros(features, 1),
            eps: DEFAULT_EPS,
        }
    }

    /// `gamma * (x - mean) / sqrt(var + eps) + beta`, with the biased variance.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.gamma.rows() {
            return Err(Error::Shape {
                op: "layer_norm",
                left: self.gamma.shape(),
                right: (x.len(), 1),
            });
        }
        let mut tape = Tape::new();
        let nodes = LayerNormNodes {
            gamma: tape.leaf(self.gamma.clone()),
            beta: tape.leaf(self.beta.clone()),
            eps: self.eps,
        };
        let input = tape.leaf(Matrix::column(x));
        let out = layer_norm_on(&mut tape, input, nodes)?;
        Ok(tape.value(out).data().to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
    pub eps: f64,
}

/// Normalises every column of `x` and applies the affine `gamma`, `beta`.
pub fn layer_norm_on(tape: &mut Tape, x: NodeId, params: LayerNormNodes) -> Result<NodeId> {
    let normed = tape.layer_norm(x, params.eps)?;
    let scaled = tape.mul_column(normed, params.gamma)?;
    tape.add_column(scaled, params.beta)
}
