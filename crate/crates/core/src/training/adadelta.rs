use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            lr: 0.10,
            rho: 0.95,
            eps: 1e-7,
        }
    }
}

/// Running averages of squared gradients and squared updates for a subset
/// of a model's parameters.
///
/// ```text
/// Eg2  <- rho Eg2  + (1 - rho) g^2
/// dx    = -sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
/// Edx2 <- rho Edx2 + (1 - rho) dx^2
/// p    <- p + lr dx
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    indices: Vec<usize>,
    sq_grad: Vec<Matrix>,
    sq_delta: Vec<Matrix>,
}

impl AdadeltaState {
    /// Zeroed accumulators for `params[i]` for every `i` in `indices`.
    pub fn new(config: AdadeltaConfig, params: &[Matrix], indices: &[usize]) -> Self {
        let zeros: Vec<Matrix> = indices.iter().map(|&i| Matrix::zeros(params[i].rows(), params[i].cols())).collect();
        AdadeltaState {
            config,
            indices: indices.to_vec(),
            sq_grad: zeros.clone(),
            sq_delta: zeros,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn sq_grad(&self) -> &[Matrix] {
        &self.sq_grad
    }

    pub fn sq_delta(&self) -> &[Matrix] {
        &self.sq_delta
    }

    /// Updates the managed entries of `params`; `grads` is indexed like
    /// `params`. Unmanaged parameters are not touched.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        let AdadeltaConfig { lr, rho, eps } = self.config;
        for (k, &i) in self.indices.iter().enumerate() {
            let (p, g) = (&mut params[i], &grads[i]);
            p.check_same_shape(g, "adadelta_step")?;
            let eg = self.sq_grad[k].data_mut();
            let ed = self.sq_delta[k].data_mut();
            for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                eg[j] = rho * eg[j] + (1.0 - rho) * gj * gj;
                let dx = -((ed[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * gj;
                ed[j] = rho * ed[j] + (1.0 - rho) * dx * dx;
                *pj += lr * dx;
            }
        }
        Ok(())
    }
}

/// Single-matrix convenience wrapper around [`AdadeltaState::step`].
pub fn adadelta_step(param: &mut Matrix, grad: &Matrix, state: &mut AdadeltaState) -> Result<()> {
    if state.indices != [0] {
        return Err(Error::Config("adadelta_step expects a state built for one parameter".into()));
    }
    state.step(std::slice::from_mut(param), std::slice::from_ref(grad))
}
