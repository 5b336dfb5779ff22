//! Self-checks runnable from the command line: gradient correctness, power
//! iteration against an eigen solver, the variance decomposition identities
//! and windowing invariants.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{make_windows, prepare, split_chronological, Series, Split};
use crate::error::Result;
use crate::layers::power_iteration;
use crate::model::{Model, ModelConfig, NormMode};
use crate::numerics::{Matrix, OpKind, RngStream};
use crate::training::gradient_check_model;
use crate::uncertainty::{decompose, mc_sample, McEnsemble};

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Smaller problem sizes.
    pub fast: bool,
    /// Break one differentiation rule to confirm the gradient check notices.
    pub corrupt_rule: Option<OpKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn outcome(name: &str, result: Result<(bool, String)>) -> CheckOutcome {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn run_verify(opts: VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();
    for norm in NormMode::ALL {
        checks.push(outcome(&format!("gradient/{}", norm.name()), check_gradients(norm, opts.corrupt_rule)));
    }
    checks.push(outcome("spectral/oracle", check_spectral(if opts.fast { 20 } else { 100 })));
    checks.push(outcome("decomposition", check_decomposition()));
    checks.push(outcome("windowing", check_windowing(if opts.fast { 30 } else { 200 })));
    VerifyReport { checks }
}

fn check_gradients(norm: NormMode, corrupt: Option<OpKind>) -> Result<(bool, String)> {
    let r = gradient_check_model(&ModelConfig::reduced(norm), 1e-4, corrupt)?;
    let mut detail = format!(
        "{} parameters, max relative error {:.3e} at {}",
        r.parameters_checked, r.max_rel_error, r.worst
    );
    if let Some(kind) = corrupt {
        detail.push_str(&format!(" (rule `{kind}` corrupted)"));
    }
    Ok((r.passed, detail))
}

fn eigen_sigma(w: &Matrix) -> f64 {
    let wt_w = w.t_matmul(w).expect("square product");
    let n = wt_w.rows();
    DMatrix::from_row_slice(n, n, wt_w.data())
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .sqrt()
}

/// Converged power iteration must agree with the eigen solver, and a short
/// run must never overshoot it (its estimate is a lower bound).
fn check_spectral(count: usize) -> Result<(bool, String)> {
    let mut rng = RngStream::new(0x5eed);
    let mut worst_converged = 0.0f64;
    let mut overshoot = 0usize;
    for _ in 0..count {
        let rows = 2 + (rng.next_u64() % 29) as usize;
        let cols = 2 + (rng.next_u64() % 29) as usize;
        let w = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())?;
        let u0: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        let truth = eigen_sigma(&w);
        let (converged, _) = power_iteration(&w, &u0, 5000)?;
        worst_converged = worst_converged.max((converged - truth).abs() / truth);
        let (short, _) = power_iteration(&w, &u0, 20)?;
        if short > truth * (1.0 + 1e-12) {
            overshoot += 1;
        }
    }
    let passed = worst_converged < 1e-6 && overshoot == 0;
    Ok((
        passed,
        format!("{count} matrices, converged relative error {worst_converged:.2e}, {overshoot} overshooting short runs"),
    ))
}

fn check_decomposition() -> Result<(bool, String)> {
    let mut rng = RngStream::new(0xdec0);
    let mut worst = 0.0f64;
    let mut additive = true;
    for _ in 0..200 {
        let t = 2 + (rng.next_u64() % 60) as usize;
        let means: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
        let log_vars: Vec<f64> = (0..t).map(|_| rng.uniform_range(-4.0, 1.0)).collect();
        let e = decompose(&McEnsemble {
            passes: t,
            means: vec![means.clone()],
            log_vars: vec![log_vars.clone()],
        })?[0];
        let m = means.iter().sum::<f64>() / t as f64;
        let pop_var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / t as f64;
        let alea = log_vars.iter().map(|s| s.exp()).sum::<f64>() / t as f64;
        worst = worst.max((e.epistemic_var - pop_var).abs()).max((e.aleatoric_var - alea).abs());
        additive &= e.total_var == e.epistemic_var + e.aleatoric_var;
    }
    let mut cfg = ModelConfig::reduced(NormMode::None);
    cfg.dropout_rate = 0.0;
    let model = Model::build(cfg, &mut RngStream::new(1))?;
    let windows: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.uniform()).collect()).collect();
    let zero_rate = decompose(&mc_sample(&model, &windows, 5, &mut RngStream::new(2))?)?
        .iter()
        .all(|e| e.epistemic_var == 0.0);
    Ok((
        worst < 1e-12 && additive && zero_rate,
        format!("max deviation {worst:.2e}, additive {additive}, zero-rate epistemic exactly 0: {zero_rate}"),
    ))
}

fn check_windowing(cases: usize) -> Result<(bool, String)> {
    let mut rng = RngStream::new(0x3d);
    let mut problems = Vec::new();
    for case in 0..cases {
        let n = 40 + (rng.next_u64() % 300) as usize;
        let lookback = 1 + (rng.next_u64() % 12) as usize;
        let horizon = 1 + (rng.next_u64() % 3) as usize;
        let flow: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 500.0)).collect();
        let series = Series::new("verify", (0..n as i64).map(|i| i * 300).collect(), flow)?;
        let mut ds = make_windows(&series, lookback, horizon)?;
        if ds.len() != n - lookback - horizon + 1 {
            problems.push(format!("case {case}: window count"));
        }
        if ds.targets[..] != series.flow[lookback - 1 + horizon..] {
            problems.push(format!("case {case}: target alignment"));
        }
        split_chronological(&mut ds, 0.6, 0.15, 0.25)?;
        let last = |s: Split| ds.indices(s).iter().map(|&k| ds.target_timestamps[k]).max();
        let first = |s: Split| ds.indices(s).iter().map(|&k| ds.target_timestamps[k]).min();
        if !(last(Split::Train) < first(Split::Val) && last(Split::Val) < first(Split::Test)) {
            problems.push(format!("case {case}: split order"));
        }
        let prepared = prepare(&series, lookback, horizon)?;
        let val = prepared.dataset.indices(Split::Val);
        let mut poisoned = series.clone();
        poisoned.flow[prepared.dataset.starts[val[val.len() - 1]] + lookback - 1 + horizon] = 1e12;
        if prepare(&poisoned, lookback, horizon)?.scaler != prepared.scaler {
            problems.push(format!("case {case}: scaler saw validation data"));
        }
    }
    Ok((
        problems.is_empty(),
        if problems.is_empty() {
            format!("{cases} random series")
        } else {
            problems.join("; ")
        },
    ))
}
