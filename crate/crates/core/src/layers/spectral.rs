//! Spectral normalisation by power iteration.
//!
//! A weight `w` is divided by an estimate of its largest singular value. The
//! estimate comes from alternating `v <- wᵀu / |wᵀu|`, `u <- w v / |w v|` and
//! reading off `sigma = uᵀ w v`. The left vector `u` is persisted between
//! calls so that one step per training pass is enough to track the spectrum
//! as the weights drift.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Power-iteration steps per training forward pass.
pub const TRAIN_ITERS: usize = 1;
/// Power-iteration steps for evaluation and verification.
pub const EVAL_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    /// Left singular vector estimate, unit L2 norm, length = rows of `w`.
    pub u: Vec<f64>,
    pub n_iter: usize,
}

impl SpectralState {
    /// Random unit start vector.
    pub fn new(rows: usize, rng: &mut RngStream) -> Self {
        loop {
            let mut u: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
            if normalize(&mut u) > 0.0 {
                return SpectralState { u, n_iter: TRAIN_ITERS };
            }
        }
    }

    pub fn with_iters(mut self, n_iter: usize) -> Self {
        self.n_iter = n_iter;
        self
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn mat_vec(w: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row_slice(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(w: &Matrix, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &ur) in u.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(w.row_slice(r)) {
            *o += a * ur;
        }
    }
    out
}

/// Runs `iters` power-iteration steps from `u` (at least one). Returns the
/// singular value estimate and the updated unit vector `u`.
pub fn power_iteration(w: &Matrix, u: &[f64], iters: usize) -> Result<(f64, Vec<f64>)> {
    if u.len() != w.rows() {
        return Err(Error::Shape {
            op: "power_iteration",
            left: w.shape(),
            right: (u.len(), 1),
        });
    }
    if w.data().iter().all(|&x| x == 0.0) {
        return Err(Error::Domain {
            op: "spectral_normalize",
            msg: "spectral norm of a zero matrix is zero".into(),
        });
    }
    let mut u = u.to_vec();
    let mut v = vec![0.0; w.cols()];
    for _ in 0..iters.max(1) {
        v = mat_t_vec(w, &u);
        if normalize(&mut v) == 0.0 {
            // u is orthogonal to the column space; restart from the largest row
            let best = (0..w.rows())
                .max_by(|&a, &b| {
                    let na: f64 = w.row_slice(a).iter().map(|x| x * x).sum();
                    let nb: f64 = w.row_slice(b).iter().map(|x| x * x).sum();
                    na.total_cmp(&nb)
                })
                .unwrap_or(0);
            v = w.row_slice(best).to_vec();
            normalize(&mut v);
        }
        u = mat_vec(w, &v);
        normalize(&mut u);
    }
    let wv = mat_vec(w, &v);
    let sigma: f64 = u.iter().zip(&wv).map(|(a, b)| a * b).sum();
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::NonFinite(format!("spectral norm estimate {sigma}")));
    }
    Ok((sigma, u))
}

/// Divides `w` by its estimated spectral norm, updating the persisted `u`.
pub fn spectral_normalize(w: &Matrix, state: &mut SpectralState) -> Result<(Matrix, f64)> {
    let (sigma, u) = power_iteration(w, &state.u, state.n_iter)?;
    state.u = u;
    Ok((w.scale(1.0 / sigma), sigma))
}
