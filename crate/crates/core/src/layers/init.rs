use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`; fan_in is the column
    /// count and fan_out the row count of the weight.
    GlorotUniform,
    Zeros,
    /// All ones; used for the forget-gate bias.
    ForgetBiasOne,
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

pub fn init_params(rows: usize, cols: usize, rng: &mut RngStream, kind: InitKind) -> Matrix {
    match kind {
        InitKind::Zeros => Matrix::zeros(rows, cols),
        InitKind::ForgetBiasOne => Matrix::filled(rows, cols, 1.0),
        InitKind::GlorotUniform => {
            let bound = glorot_bound(rows, cols);
            let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
            Matrix::from_vec(rows, cols, data).expect("init shape")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_ones() {
        let mut rng = RngStream::new(0);
        assert_eq!(init_params(3, 1, &mut rng, InitKind::Zeros).data(), &[0.0; 3]);
        assert_eq!(init_params(4, 1, &mut rng, InitKind::ForgetBiasOne).data(), &[1.0; 4]);
    }

    #[test]
    fn glorot_respects_bound() {
        let mut rng = RngStream::new(5);
        let bound = glorot_bound(20, 30);
        assert!((bound - 0.3464).abs() < 1e-4);
        let w = init_params(20, 30, &mut rng, InitKind::GlorotUniform);
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        // the draws should actually fill the interval
        let max = w.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max > 0.9 * bound);
    }
}
