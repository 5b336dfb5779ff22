use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    Off,
    Train,
    Mc,
}

/// Inverted dropout: units survive with probability `1 - rate` and survivors
/// are scaled by `1 / (1 - rate)`, so a masked layer is unbiased.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: DropoutMode,
}

impl DropoutSpec {
    pub const OFF: DropoutSpec = DropoutSpec {
        rate: 0.0,
        mode: DropoutMode::Off,
    };

    pub fn new(rate: f64, mode: DropoutMode) -> Self {
        debug_assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        DropoutSpec { rate, mode }
    }

    pub fn is_active(&self) -> bool {
        self.mode != DropoutMode::Off && self.rate > 0.0
    }

    /// Draws a `rows x cols` mask, or `None` when dropout is inactive (no
    /// random numbers are consumed in that case).
    pub fn mask(&self, rows: usize, cols: usize, rng: &mut RngStream) -> Option<Matrix> {
        if !self.is_active() {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let data = (0..rows * cols)
            .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
            .collect();
        Some(Matrix::from_vec(rows, cols, data).expect("mask shape"))
    }
}
