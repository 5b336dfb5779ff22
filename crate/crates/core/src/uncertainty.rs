//! Monte-Carlo dropout sampling and the split of predictive variance into
//! epistemic and aleatoric parts.
//!
//! For `T` stochastic passes producing means `m_t` and log-variances `s_t`:
//!
//! ```text
//! mean      = (1/T) sum m_t
//! epistemic = (1/T) sum m_t^2 - mean^2        (population form)
//! aleatoric = (1/T) sum exp(s_t)
//! total     = epistemic + aleatoric
//! interval  = mean -/+ 1.96 sqrt(total)
//! ```

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::Regime;
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::model::{ForwardMode, Model};
use crate::numerics::RngStream;
use crate::stats;
use crate::training::DEFAULT_LOG_VAR_CLAMP;

pub const DEFAULT_PASSES: usize = 50;
pub const Z_95: f64 = 1.96;
/// Negative epistemic variances down to this value are rounding noise and
/// are reported as 0.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = -1e-12;

const PASS_CHUNK: usize = 2048;

/// Per-pass predictions: `means[i][t]` is pass `t` for sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct McEnsemble {
    pub passes: usize,
    pub means: Vec<Vec<f64>>,
    pub log_vars: Vec<Vec<f64>>,
}

impl McEnsemble {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Runs `passes` dropout-active forwards over `windows`. Each pass draws
/// its masks from its own stream split off `rng`, so the result does not
/// depend on how passes are scheduled across threads.
pub fn mc_sample<W: AsRef<[f64]> + Sync>(model: &Model, windows: &[W], passes: usize, rng: &mut RngStream) -> Result<McEnsemble> {
    if passes == 0 {
        return Err(Error::Config("at least one Monte-Carlo pass is required".into()));
    }
    let base = RngStream::new(rng.next_u64());
    let sigmas = model.eval_sigmas()?;
    let per_pass: Vec<Vec<(f64, f64)>> = (0..passes)
        .into_par_iter()
        .map(|t| {
            let mut stream = base.split(t as u64);
            let mut out = Vec::with_capacity(windows.len());
            for chunk in windows.chunks(PASS_CHUNK) {
                let res = model.forward_batch_with(&sigmas, chunk, ForwardMode::Mc, &mut stream)?;
                out.extend(res.into_iter().map(|o| (o.mean, o.log_var)));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n = windows.len();
    Ok(McEnsemble {
        passes,
        means: (0..n).map(|i| per_pass.iter().map(|p| p[i].0).collect()).collect(),
        log_vars: (0..n).map(|i| per_pass.iter().map(|p| p[i].1).collect()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub mean: f64,
    pub epistemic_var: f64,
    pub aleatoric_var: f64,
    pub total_var: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl UncertaintyEstimate {
    fn from_parts(mean: f64, epistemic_var: f64, aleatoric_var: f64) -> Self {
        let total_var = epistemic_var + aleatoric_var;
        let half = Z_95 * total_var.sqrt();
        UncertaintyEstimate {
            mean,
            epistemic_var,
            aleatoric_var,
            total_var,
            lower95: mean - half,
            upper95: mean + half,
        }
    }

    pub fn epistemic_std(&self) -> f64 {
        self.epistemic_var.sqrt()
    }

    pub fn aleatoric_std(&self) -> f64 {
        self.aleatoric_var.sqrt()
    }

    pub fn total_std(&self) -> f64 {
        self.total_var.sqrt()
    }

    /// The estimate in original flow units: the mean is inverse-scaled and
    /// variances multiplied by the squared scaler range.
    pub fn unscaled(&self, scaler: &Scaler) -> Self {
        UncertaintyEstimate::from_parts(
            scaler.inverse(self.mean),
            scaler.unscale_variance(self.epistemic_var),
            scaler.unscale_variance(self.aleatoric_var),
        )
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower95 <= y && y <= self.upper95
    }
}

/// Applies the decomposition to every sample. Log-variances are clamped to
/// the range used by the training loss before exponentiation.
pub fn decompose(ens: &McEnsemble) -> Result<Vec<UncertaintyEstimate>> {
    if ens.passes < 2 {
        return Err(Error::Domain {
            op: "decompose",
            msg: format!("epistemic variance needs at least 2 passes, got {}", ens.passes),
        });
    }
    let t = ens.passes as f64;
    let (lo, hi) = DEFAULT_LOG_VAR_CLAMP;
    ens.means
        .iter()
        .zip(&ens.log_vars)
        .enumerate()
        .map(|(i, (means, log_vars))| {
            if means.iter().chain(log_vars).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("Monte-Carlo pass output for sample {i}")));
            }
            // moments of the offsets from the first pass: the same formula,
            // but identical passes give exactly zero and less cancellation
            let shift = means[0];
            let first = means.iter().map(|m| m - shift).sum::<f64>() / t;
            let second = means.iter().map(|m| (m - shift).powi(2)).sum::<f64>() / t;
            let mean = shift + first;
            let mut epistemic = second - first * first;
            if epistemic < 0.0 {
                if epistemic < NEGATIVE_VARIANCE_TOLERANCE {
                    return Err(Error::Domain {
                        op: "decompose",
                        msg: format!("epistemic variance {epistemic} for sample {i}"),
                    });
                }
                epistemic = 0.0;
            }
            let aleatoric = log_vars.iter().map(|s| s.clamp(lo, hi).exp()).sum::<f64>() / t;
            Ok(UncertaintyEstimate::from_parts(mean, epistemic, aleatoric))
        })
        .collect()
}

/// Box-plot summary; whiskers reach the most extreme values within 1.5 IQR
/// of the quartiles. Quantiles interpolate linearly at `q (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let s = stats::sorted(values);
    let q1 = stats::quantile_sorted(&s, 0.25);
    let q3 = stats::quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Some(BoxStats {
        count: s.len(),
        median: stats::quantile_sorted(&s, 0.5),
        q1,
        q3,
        iqr,
        whisker_low: *s.iter().find(|&&v| v >= fence_lo).expect("q1 is within its own fence"),
        whisker_high: *s.iter().rev().find(|&&v| v <= fence_hi).expect("q3 is within its own fence"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Epistemic,
    Aleatoric,
    Total,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Epistemic, Component::Aleatoric, Component::Total];

    pub fn name(self) -> &'static str {
        match self {
            Component::Epistemic => "epistemic",
            Component::Aleatoric => "aleatoric",
            Component::Total => "total",
        }
    }

    pub fn std_of(self, e: &UncertaintyEstimate) -> f64 {
        match self {
            Component::Epistemic => e.epistemic_std(),
            Component::Aleatoric => e.aleatoric_std(),
            Component::Total => e.total_std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// `all` or a regime name.
    pub group: String,
    pub component: Component,
    pub stats: BoxStats,
}

/// Box statistics of the standard deviations, over all samples or per
/// regime when `regimes` is given. A regime with no samples is an error.
pub fn summarize_uncertainty(estimates: &[UncertaintyEstimate], regimes: Option<&[Regime]>) -> Result<Vec<SummaryRow>> {
    let groups: Vec<(String, Vec<&UncertaintyEstimate>)> = match regimes {
        None => vec![("all".to_string(), estimates.iter().collect())],
        Some(labels) => {
            if labels.len() != estimates.len() {
                return Err(Error::Shape {
                    op: "summarize_uncertainty",
                    left: (estimates.len(), 1),
                    right: (labels.len(), 1),
                });
            }
            Regime::ALL
                .iter()
                .map(|&r| {
                    let members = estimates.iter().zip(labels).filter(|(_, &l)| l == r).map(|(e, _)| e).collect();
                    (r.name().to_string(), members)
                })
                .collect()
        }
    };
    let mut rows = Vec::new();
    for (group, members) in groups {
        if members.is_empty() {
            return Err(Error::Data(format!("no samples in group `{group}`")));
        }
        for component in Component::ALL {
            let values: Vec<f64> = members.iter().map(|e| component.std_of(e)).collect();
            rows.push(SummaryRow {
                group: group.clone(),
                component,
                stats: box_stats(&values).expect("non-empty group"),
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("group,component,count,median,q1,q3,whisker_low,whisker_high\n");
    for r in rows {
        let s = &r.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.group,
            r.component.name(),
            s.count,
            s.median,
            s.q1,
            s.q3,
            s.whisker_low,
            s.whisker_high
        );
    }
    out
}

/// Per-sample CSV; callers pass estimates already in the units they want.
pub fn estimates_csv(timestamps: &[i64], y_true: &[f64], estimates: &[UncertaintyEstimate]) -> String {
    let mut out = String::from("timestamp,y_true,mean,epistemic_std,aleatoric_std,total_std,lower95,upper95\n");
    for ((t, y), e) in timestamps.iter().zip(y_true).zip(estimates) {
        let _ = writeln!(
            out,
            "{t},{y},{},{},{},{},{},{}",
            e.mean,
            e.epistemic_std(),
            e.aleatoric_std(),
            e.total_std(),
            e.lower95,
            e.upper95
        );
    }
    out
}

/// Fraction of targets inside their 95% interval.
pub fn coverage(estimates: &[UncertaintyEstimate], y_true: &[f64]) -> f64 {
    let inside = estimates.iter().zip(y_true).filter(|(e, &y)| e.contains(y)).count();
    inside as f64 / estimates.len() as f64
}
