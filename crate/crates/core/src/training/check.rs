//! Whole-model gradient check against central finite differences.

use serde::Serialize;

use super::loss::{nll_on_tape, DEFAULT_LOG_VAR_CLAMP};
use crate::error::Result;
use crate::model::{input_leaves, ForwardMode, Model, ModelConfig};
use crate::numerics::{finite_difference_gradient, relative_error, Matrix, OpKind, RngStream, Tape};

pub const FD_STEP: f64 = 1e-6;
const CHECK_BATCH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub norm_mode: String,
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate, e.g. `lstm0.w_f[2]`.
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

struct Fixture {
    model: Model,
    sigmas: Vec<f64>,
    windows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    mask_seed: u64,
}

impl Fixture {
    fn new(config: &ModelConfig) -> Result<Fixture> {
        let mut rng = RngStream::with_stream(config.seed, 0x6c);
        let model = Model::build(config.clone(), &mut rng)?;
        let windows = (0..CHECK_BATCH)
            .map(|_| (0..config.lookback).map(|_| rng.uniform()).collect())
            .collect();
        let targets = (0..CHECK_BATCH).map(|_| rng.uniform()).collect();
        // sigmas are constants of a pass, so they are fixed across probes
        let sigmas = model.eval_sigmas()?;
        Ok(Fixture {
            model,
            sigmas,
            windows,
            targets,
            mask_seed: rng.next_u64(),
        })
    }

    /// Loss and (optionally) raw-parameter gradients on `tape`. The dropout
    /// stream is re-seeded so every evaluation sees the same masks.
    fn evaluate(&self, model: &Model, mut tape: Tape, with_grad: bool) -> Result<(f64, Option<Vec<Matrix>>)> {
        let mut masks = RngStream::new(self.mask_seed);
        let bound = model.bind(&mut tape, &self.sigmas);
        let inputs = input_leaves(&mut tape, &self.windows, model.config().lookback)?;
        let out = model.graph(&mut tape, &bound, &inputs, ForwardMode::Train, &mut masks)?;
        let y = tape.leaf(Matrix::row(&self.targets));
        let loss = nll_on_tape(&mut tape, out.mean, out.log_var, y, DEFAULT_LOG_VAR_CLAMP)?;
        let value = tape.value(loss).get(0, 0);
        if !with_grad {
            return Ok((value, None));
        }
        let grads = tape.backward(loss)?;
        let per_param = bound
            .raw
            .iter()
            .zip(model.params())
            .map(|(&id, p)| grads.get_or_zeros(id, p))
            .collect();
        Ok((value, Some(per_param)))
    }
}

/// Compares tape gradients of the loss with finite differences over every
/// parameter of a model built from `config`. `corrupted` perturbs one
/// differentiation rule, which a working check must detect.
pub fn gradient_check_model(config: &ModelConfig, tolerance: f64, corrupted: Option<OpKind>) -> Result<GradCheckReport> {
    let fx = Fixture::new(config)?;
    let tape = match corrupted {
        Some(kind) => Tape::with_corrupted_rule(kind),
        None => Tape::new(),
    };
    let (_, grads) = fx.evaluate(&fx.model, tape, true)?;
    let analytic: Vec<f64> = grads
        .expect("gradients requested")
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();

    let mut probe = fx.model.clone();
    let theta = fx.model.flat_params();
    let mut failure = None;
    let numeric = finite_difference_gradient(
        |x| {
            probe.set_flat_params(x).expect("same length");
            match fx.evaluate(&probe, Tape::new(), false) {
                Ok((v, _)) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &theta,
        FD_STEP,
    );
    if let Some(e) = failure {
        return Err(e);
    }

    let mut worst = (0.0f64, 0usize);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(*a, *n);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        norm_mode: config.norm_mode.name().to_string(),
        parameters_checked: theta.len(),
        max_rel_error: worst.0,
        worst: coordinate_name(&fx.model, worst.1),
        tolerance,
        passed: worst.0 < tolerance,
    })
}

fn coordinate_name(model: &Model, mut flat: usize) -> String {
    for (p, info) in model.params().iter().zip(model.param_info()) {
        if flat < p.len() {
            return format!("{}[{}]", info.name, flat);
        }
        flat -= p.len();
    }
    String::from("?")
}
