//! Accuracy metrics, time-of-day traffic regimes, input-gradient saliency and
//! dispersion of the penultimate features.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::series::SECONDS_PER_DAY;
use crate::error::{Error, Result};
use crate::model::{input_leaves, ForwardMode, Model};
use crate::numerics::{RngStream, Tape};
use crate::stats;

/// Targets with `|y|` below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// Mean absolute percentage error as a ratio (0.075 means 7.5%).
    pub mape: f64,
    pub r2: f64,
    pub n: usize,
    pub mape_excluded: usize,
}

pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            op: "compute_metrics",
            left: (y_true.len(), 1),
            right: (y_pred.len(), 1),
        });
    }
    let n = y_true.len();
    if n < 2 {
        return Err(Error::Data(format!("metrics need at least 2 samples, got {n}")));
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    let y_bar = stats::mean(y_true);
    let sst: f64 = y_true.iter().map(|y| (y - y_bar).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::Domain {
            op: "compute_metrics",
            msg: "R^2 is undefined for constant targets".into(),
        });
    }
    let kept: Vec<f64> = y_true
        .iter()
        .zip(y_pred)
        .filter(|(y, _)| y.abs() >= MAPE_FLOOR)
        .map(|(y, p)| ((y - p) / y).abs())
        .collect();
    if kept.is_empty() {
        return Err(Error::Data("every target is zero; MAPE is undefined".into()));
    }
    Ok(Metrics {
        rmse: (sse / n as f64).sqrt(),
        mape: stats::mean(&kept),
        r2: 1.0 - sse / sst,
        n,
        mape_excluded: n - kept.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Low,
    Increasing,
    High,
    Decreasing,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Low, Regime::Increasing, Regime::High, Regime::Decreasing];

    /// `[0,6)` low, `[6,8)` increasing, `[8,18)` high, `[18,24)` decreasing.
    pub fn from_timestamp(timestamp: i64) -> Regime {
        let secs = timestamp.rem_euclid(SECONDS_PER_DAY);
        match secs / 3600 {
            0..=5 => Regime::Low,
            6..=7 => Regime::Increasing,
            8..=17 => Regime::High,
            _ => Regime::Decreasing,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Low => "low",
            Regime::Increasing => "increasing",
            Regime::High => "high",
            Regime::Decreasing => "decreasing",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn label_regimes(timestamps: &[i64]) -> Vec<Regime> {
    timestamps.iter().map(|&t| Regime::from_timestamp(t)).collect()
}

/// Gradient of the predicted mean with respect to each input lag, oldest
/// lag first, in the deterministic forward mode.
pub fn input_gradients<W: AsRef<[f64]>>(model: &Model, windows: &[W]) -> Result<Vec<Vec<f64>>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let sigmas = model.eval_sigmas()?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, &sigmas);
    let inputs = input_leaves(&mut tape, windows, model.config().lookback)?;
    // batch columns never interact, so d(sum of means)/dx gives each
    // window's own gradient
    let out = model.graph(&mut tape, &bound, &inputs, ForwardMode::Deterministic, &mut RngStream::new(0))?;
    let total = tape.sum(out.mean);
    let grads = tape.backward(total)?;
    let per_step: Vec<_> = inputs
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id)))
        .collect();
    let rows: Vec<Vec<f64>> = (0..windows.len())
        .map(|j| per_step.iter().map(|g| g.get(0, j)).collect())
        .collect();
    if rows.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("input gradient".into()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyMap {
    pub timestamps: Vec<i64>,
    pub raw: Vec<Vec<f64>>,
    /// `raw` min-max scaled to `[0, 1]` over all cells of the same day.
    pub normalized: Vec<Vec<f64>>,
}

impl SaliencyMap {
    pub fn new(timestamps: Vec<i64>, raw: Vec<Vec<f64>>) -> SaliencyMap {
        let normalized = normalize_per_day(&timestamps, &raw);
        SaliencyMap {
            timestamps,
            raw,
            normalized,
        }
    }

    /// One row per sample; columns run from the oldest lag to the newest.
    pub fn to_csv(&self) -> String {
        let lags = self.normalized.first().map_or(0, Vec::len);
        let mut out = String::from("timestamp");
        for k in (0..lags).rev() {
            let _ = write!(out, ",lag{k}");
        }
        out.push('\n');
        for (t, row) in self.timestamps.iter().zip(&self.normalized) {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Min-max scaling of every cell by the extremes of its day. A day whose
/// cells are all equal maps to zeros.
pub fn normalize_per_day(timestamps: &[i64], raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let day_of = |t: i64| t.div_euclid(SECONDS_PER_DAY);
    let mut out = raw.to_vec();
    let mut start = 0;
    while start < raw.len() {
        let day = day_of(timestamps[start]);
        let end = (start..raw.len()).find(|&i| day_of(timestamps[i]) != day).unwrap_or(raw.len());
        let cells = raw[start..end].iter().flatten();
        let lo = cells.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = cells.copied().fold(f64::NEG_INFINITY, f64::max);
        for row in &mut out[start..end] {
            for v in row.iter_mut() {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureStat {
    pub regime: Regime,
    /// Sum over feature dimensions of the per-dimension sample variance.
    pub variance: f64,
    pub count: usize,
}

/// Summed per-dimension sample variance of a set of vectors.
pub fn summed_variance(vectors: &[Vec<f64>]) -> Option<f64> {
    let dims = vectors.first()?.len();
    (0..dims)
        .map(|d| {
            let column: Vec<f64> = vectors.iter().map(|v| v[d]).collect();
            stats::sample_variance(&column)
        })
        .sum()
}

/// Dispersion of the deterministic penultimate features per regime.
pub fn feature_dispersion<W: AsRef<[f64]>>(model: &Model, windows: &[W], labels: &[Regime]) -> Result<Vec<FeatureStat>> {
    if windows.len() != labels.len() {
        return Err(Error::Shape {
            op: "feature_dispersion",
            left: (windows.len(), 1),
            right: (labels.len(), 1),
        });
    }
    let outputs = model.forward_batch(windows, ForwardMode::Deterministic, &mut RngStream::new(0))?;
    Regime::ALL
        .iter()
        .map(|&regime| {
            let group: Vec<Vec<f64>> = outputs
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == regime)
                .map(|(o, _)| o.features.clone())
                .collect();
            let variance = summed_variance(&group)
                .ok_or_else(|| Error::Data(format!("regime `{regime}` has {} samples, need 2", group.len())))?;
            Ok(FeatureStat {
                regime,
                variance,
                count: group.len(),
            })
        })
        .collect()
}

pub fn dispersion_csv(stats: &[FeatureStat]) -> String {
    let mut out = String::from("regime,variance,count\n");
    for s in stats {
        let _ = writeln!(out, "{},{},{}", s.regime, s.variance, s.count);
    }
    out
}

/// `label,rmse,mape,r2,n,mape_excluded` rows.
pub fn metrics_csv(rows: &[(String, Metrics)]) -> String {
    let mut out = String::from("label,rmse,mape,r2,n,mape_excluded\n");
    for (label, m) in rows {
        let _ = writeln!(out, "{label},{},{},{},{},{}", m.rmse, m.mape, m.r2, m.n, m.mape_excluded);
    }
    out
}
