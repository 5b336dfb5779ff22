//! Heteroscedastic Gaussian negative log-likelihood.
//!
//! Per sample `0.5 * exp(-s) * (y - mean)^2 + 0.5 * s`, averaged over the
//! batch, where `s` is the predicted log-variance clamped before use.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape};

pub const DEFAULT_LOG_VAR_CLAMP: (f64, f64) = (-15.0, 15.0);

pub fn nll_term(y: f64, mean: f64, log_var: f64, clamp: (f64, f64)) -> f64 {
    let s = log_var.clamp(clamp.0, clamp.1);
    let r = y - mean;
    0.5 * (-s).exp() * r * r + 0.5 * s
}

/// Mean loss over `(y, mean, log_var)` triples.
pub fn nll_loss(batch: &[(f64, f64, f64)], clamp: (f64, f64)) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain {
            op: "nll_loss",
            msg: "empty batch".into(),
        });
    }
    let total: f64 = batch.iter().map(|&(y, m, s)| nll_term(y, m, s, clamp)).sum();
    Ok(total / batch.len() as f64)
}

/// The same loss recorded on a tape. `mean`, `log_var` and `targets` are
/// `1 x B` nodes.
pub fn nll_on_tape(tape: &mut Tape, mean: NodeId, log_var: NodeId, targets: NodeId, clamp: (f64, f64)) -> Result<NodeId> {
    let s = tape.clamp(log_var, clamp.0, clamp.1);
    let neg_s = tape.scale(s, -1.0);
    let precision = tape.exp(neg_s);
    let resid = tape.sub(targets, mean)?;
    let sq = tape.square(resid);
    let weighted = tape.hadamard(precision, sq)?;
    let fit = tape.scale(weighted, 0.5);
    let half_s = tape.scale(s, 0.5);
    let terms = tape.add(fit, half_s)?;
    tape.mean(terms)
}
