use serde::{Deserialize, Serialize};

use super::scaler::Scaler;
use super::series::Series;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Chronological split fractions.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.60, 0.15, 0.25);

/// Stride-1 sliding windows over a series. Window `k` covers series indices
/// `starts[k] .. starts[k] + lookback` and its target sits at
/// `starts[k] + lookback - 1 + horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub lookback: usize,
    pub horizon: usize,
    pub starts: Vec<usize>,
    pub windows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub target_timestamps: Vec<i64>,
    pub splits: Vec<Split>,
    /// Windows discarded because they touched a gap.
    pub dropped_for_gaps: usize,
}

pub fn make_windows(series: &Series, lookback: usize, horizon: usize) -> Result<WindowedDataset> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("lookback and horizon must be at least 1".into()));
    }
    let n = series.len();
    if n < lookback + horizon {
        return Err(Error::Data(format!(
            "series of {n} points is too short for lookback {lookback} and horizon {horizon}"
        )));
    }
    // prefix count of gaps so each window is checked in O(1)
    let mut gap_prefix = vec![0usize; n + 1];
    for (i, &g) in series.gaps.iter().enumerate() {
        gap_prefix[i + 1] = gap_prefix[i] + usize::from(g);
    }
    let total = n - lookback - horizon + 1;
    let mut ds = WindowedDataset {
        lookback,
        horizon,
        starts: Vec::with_capacity(total),
        windows: Vec::with_capacity(total),
        targets: Vec::with_capacity(total),
        target_timestamps: Vec::with_capacity(total),
        splits: Vec::with_capacity(total),
        dropped_for_gaps: 0,
    };
    for start in 0..total {
        let target = start + lookback - 1 + horizon;
        if gap_prefix[target + 1] - gap_prefix[start] > 0 {
            ds.dropped_for_gaps += 1;
            continue;
        }
        ds.starts.push(start);
        ds.windows.push(series.flow[start..start + lookback].to_vec());
        ds.targets.push(series.flow[target]);
        ds.target_timestamps.push(series.timestamps[target]);
        ds.splits.push(Split::Train);
    }
    Ok(ds)
}

/// Labels windows train/val/test in chronological order with
/// `train = floor(train_frac * n)`, `val = floor(val_frac * n)` and the
/// remainder as test.
pub fn split_chronological(ds: &mut WindowedDataset, train_frac: f64, val_frac: f64, test_frac: f64) -> Result<()> {
    let sum = train_frac + val_frac + test_frac;
    if train_frac <= 0.0 || val_frac < 0.0 || test_frac < 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {train_frac}/{val_frac}/{test_frac}"
        )));
    }
    let n = ds.len();
    let n_train = (train_frac * n as f64 + 1e-9).floor() as usize;
    let n_val = (val_frac * n as f64 + 1e-9).floor() as usize;
    for (k, split) in ds.splits.iter_mut().enumerate() {
        *split = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.splits[k] == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Series values read by the given windows, inputs and targets, each
    /// series index once.
    pub fn covered_values(&self, series: &Series, indices: &[usize]) -> Vec<f64> {
        let mut seen = vec![false; series.len()];
        for &k in indices {
            let start = self.starts[k];
            for i in start..start + self.lookback {
                seen[i] = true;
            }
            seen[start + self.lookback - 1 + self.horizon] = true;
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| series.flow[i])
            .collect()
    }

    pub fn scaled(&self, scaler: &Scaler) -> WindowedDataset {
        WindowedDataset {
            windows: self.windows.iter().map(|w| scaler.apply_all(w)).collect(),
            targets: scaler.apply_all(&self.targets),
            ..self.clone()
        }
    }

    pub fn subset(&self, indices: &[usize]) -> WindowedDataset {
        WindowedDataset {
            lookback: self.lookback,
            horizon: self.horizon,
            starts: indices.iter().map(|&k| self.starts[k]).collect(),
            windows: indices.iter().map(|&k| self.windows[k].clone()).collect(),
            targets: indices.iter().map(|&k| self.targets[k]).collect(),
            target_timestamps: indices.iter().map(|&k| self.target_timestamps[k]).collect(),
            splits: indices.iter().map(|&k| self.splits[k]).collect(),
            dropped_for_gaps: 0,
        }
    }

    /// Windows of one split as a standalone dataset.
    pub fn split_subset(&self, split: Split) -> WindowedDataset {
        self.subset(&self.indices(split))
    }
}

/// A windowed, split and scaled dataset together with its scaler.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: WindowedDataset,
    pub scaler: Scaler,
}

/// Windows `series`, splits it 60/15/25 and fits the scaler on the values
/// read by training windows only.
pub fn prepare(series: &Series, lookback: usize, horizon: usize) -> Result<PreparedData> {
    let mut raw = make_windows(series, lookback, horizon)?;
    let (tr, va, te) = DEFAULT_SPLIT;
    split_chronological(&mut raw, tr, va, te)?;
    if raw.count(Split::Train) == 0 || raw.count(Split::Val) == 0 {
        return Err(Error::Data(format!(
            "only {} usable windows; need non-empty train and validation splits",
            raw.len()
        )));
    }
    let scaler = Scaler::fit(&raw.covered_values(series, &raw.indices(Split::Train)))?;
    Ok(PreparedData {
        dataset: raw.scaled(&scaler),
        scaler,
    })
}

/// Same windowing and split, with an externally fitted scaler.
pub fn prepare_with_scaler(series: &Series, lookback: usize, horizon: usize, scaler: Scaler) -> Result<PreparedData> {
    let mut raw = make_windows(series, lookback, horizon)?;
    let (tr, va, te) = DEFAULT_SPLIT;
    split_chronological(&mut raw, tr, va, te)?;
    Ok(PreparedData {
        dataset: raw.scaled(&scaler),
        scaler,
    })
}
