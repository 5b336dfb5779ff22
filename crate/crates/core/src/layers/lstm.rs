//! LSTM cell with recurrent dropout on the candidate cell update.
//!
//! Each gate owns a weight matrix of shape `(H, H + D)` acting on the stacked
//! vector `[h_{t-1}; x_t]`. Batches are carried as columns, so a state is an
//! `H x B` matrix and an input step is `D x B`.
//!
//! ```text
//! f_t  = sigmoid(W_f [h, x] + b_f)
//! i_t  = sigmoid(W_i [h, x] + b_i)
//! o_t  = sigmoid(W_o [h, x] + b_o)
//! c~_t = tanh(W_c [h, x] + b_c)
//! C_t  = f_t * C_{t-1} + i_t * d(c~_t)
//! h_t  = o_t * tanh(C_t)
//! ```

use super::dropout::DropoutSpec;
use super::init::{init_params, InitKind};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, RngStream, Tape};

/// Gate order used for every `[_; 4]` array in this module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Candidate => "c",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub weights: [Matrix; 4],
    pub biases: [Matrix; 4],
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            weights: std::array::from_fn(|_| Matrix::zeros(hidden, hidden + input)),
            biases: std::array::from_fn(|_| Matrix::zeros(hidden, 1)),
        }
    }

    /// Glorot-uniform gate weights, zero biases except a unit forget bias.
    pub fn init(hidden: usize, input: usize, rng: &mut RngStream) -> Self {
        let weights = std::array::from_fn(|_| init_params(hidden, hidden + input, rng, InitKind::GlorotUniform));
        let biases = std::array::from_fn(|g| {
            let kind = if g == Gate::Forget as usize {
                InitKind::ForgetBiasOne
            } else {
                InitKind::Zeros
            };
            init_params(hidden, 1, rng, kind)
        });
        LstmParams { weights, biases }
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn input(&self) -> usize {
        self.weights[0].cols() - self.hidden()
    }

    /// One step evaluated on a scratch tape. `x` is `D x B`.
    pub fn step(&self, state: &LstmState, x: &Matrix, drop: &DropoutSpec, rng: &mut RngStream) -> Result<LstmState> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape);
        let h = tape.leaf(state.h.clone());
        let c = tape.leaf(state.c.clone());
        let x = tape.leaf(x.clone());
        let mask = drop.mask(self.hidden(), state.h.cols(), rng);
        let next = lstm_step(&mut tape, &nodes, LstmStateNodes { h, c }, x, mask.as_ref())?;
        Ok(LstmState {
            h: tape.value(next.h).clone(),
            c: tape.value(next.c).clone(),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmNodes {
        LstmNodes {
            weights: std::array::from_fn(|g| tape.leaf(self.weights[g].clone())),
            biases: std::array::from_fn(|g| tape.leaf(self.biases[g].clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        LstmState {
            h: Matrix::zeros(hidden, batch),
            c: Matrix::zeros(hidden, batch),
        }
    }
}

/// Tape handles for the (possibly normalised) gate parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub weights: [NodeId; 4],
    pub biases: [NodeId; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct LstmStateNodes {
    pub h: NodeId,
    pub c: NodeId,
}

/// Records one cell step. `candidate_mask`, when present, is the dropout mask
/// `d(.)` applied to the candidate update.
pub fn lstm_step(
    tape: &mut Tape,
    params: &LstmNodes,
    state: LstmStateNodes,
    x: NodeId,
    candidate_mask: Option<&Matrix>,
) -> Result<LstmStateNodes> {
    let hidden = tape.value(params.weights[0]).rows();
    let (h_shape, c_shape) = (tape.value(state.h).shape(), tape.value(state.c).shape());
    if h_shape.0 != hidden || c_shape != h_shape {
        return Err(Error::Shape {
            op: "lstm_step state",
            left: h_shape,
            right: c_shape,
        });
    }
    let stacked = tape.vstack(state.h, x)?;
    let mut pre = [stacked; 4];
    for g in Gate::ALL {
        let lin = tape.matmul(params.weights[g as usize], stacked)?;
        pre[g as usize] = tape.add_column(lin, params.biases[g as usize])?;
    }
    let forget = tape.sigmoid(pre[Gate::Forget as usize]);
    let input = tape.sigmoid(pre[Gate::Input as usize]);
    let output = tape.sigmoid(pre[Gate::Output as usize]);
    let mut candidate = tape.tanh(pre[Gate::Candidate as usize]);
    if let Some(mask) = candidate_mask {
        let m = tape.leaf(mask.clone());
        candidate = tape.hadamard(candidate, m)?;
    }
    let kept = tape.hadamard(forget, state.c)?;
    let written = tape.hadamard(input, candidate)?;
    let c = tape.add(kept, written)?;
    let squashed = tape.tanh(c);
    let h = tape.hadamard(output, squashed)?;
    Ok(LstmStateNodes { h, c })
}
