use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Min-max scaler fitted on the training split only. Values outside the
/// training range map outside `[0, 1]`; nothing is clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn fit(train: &[f64]) -> Result<Scaler> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit scaler on an empty training split".into()));
        }
        let min = train.iter().copied().fold(f64::INFINITY, f64::min);
        let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::Data(format!("training split is constant ({min}); cannot scale")));
        }
        Ok(Scaler { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.range()
    }

    pub fn inverse(&self, x: f64) -> f64 {
        x * self.range() + self.min
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    /// Converts a variance in scaled units to squared vehicle counts.
    pub fn unscale_variance(&self, var: f64) -> f64 {
        var * self.range() * self.range()
    }
}
