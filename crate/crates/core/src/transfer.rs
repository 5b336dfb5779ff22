//! Adapting a trained model to another station: the LSTM stack is frozen and
//! only the dense head (plus its layer-norm gains and shifts, if any) is
//! retrained on the first part of the target series.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_metrics, Metrics};
use crate::data::{make_windows, split_chronological, Scaler, Series, Split, WindowedDataset, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::model::{Model, ParamGroup};
use crate::numerics::RngStream;
use crate::training::{train_on, TrainConfig, TrainReport};
use crate::uncertainty::{decompose, mc_sample, UncertaintyEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSpec {
    /// Leading share of the target windows used for retraining.
    pub fraction: f64,
    /// Share of the retraining slice held back (at its end) to pick the best
    /// retraining epoch.
    pub validation_share: f64,
    pub train: TrainConfig,
    /// Retrain the dense-side layer-norm gains and shifts as well.
    pub retrain_dense_norm: bool,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec {
            fraction: 0.20,
            validation_share: 0.20,
            train: TrainConfig::default(),
            retrain_dense_norm: true,
        }
    }
}

impl TransferSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction must lie in (0, 1], got {}", self.fraction)));
        }
        if !(self.validation_share > 0.0 && self.validation_share < 1.0) {
            return Err(Error::Config(format!(
                "validation_share must lie in (0, 1), got {}",
                self.validation_share
            )));
        }
        self.train.validate()
    }

    /// Parameter indices updated during retraining.
    pub fn trainable(&self, model: &Model) -> Vec<usize> {
        let mut groups = vec![ParamGroup::Dense];
        if self.retrain_dense_norm {
            groups.push(ParamGroup::DenseNorm);
        }
        model.group_indices(&groups)
    }
}

/// Target windows scaled with the model's own scaler, split 60/15/25.
pub fn target_windows(model: &Model, target: &Series) -> Result<WindowedDataset> {
    let scaler = model_scaler(model)?;
    let cfg = model.config();
    let mut ds = make_windows(target, cfg.lookback, cfg.horizon)?;
    let (tr, va, te) = DEFAULT_SPLIT;
    split_chronological(&mut ds, tr, va, te)?;
    Ok(ds.scaled(&scaler))
}

fn model_scaler(model: &Model) -> Result<Scaler> {
    model
        .scaler()
        .copied()
        .ok_or_else(|| Error::Config("model has no scaler; train it on data first".into()))
}

/// Number of leading windows reserved for retraining.
pub fn retrain_count(total: usize, fraction: f64) -> usize {
    (fraction * total as f64 + 1e-9).floor() as usize
}

/// Retrains the dense head on the first `spec.fraction` of the target
/// windows with a fresh optimiser. LSTM parameters and their spectral
/// vectors are left bit-identical.
pub fn transfer_retrain(model: Model, target: &Series, spec: &TransferSpec, rng: &mut RngStream) -> Result<(Model, TrainReport)> {
    spec.validate()?;
    let ds = target_windows(&model, target)?;
    retrain_on_windows(model, &ds, spec, rng)
}

fn retrain_on_windows(model: Model, ds: &WindowedDataset, spec: &TransferSpec, rng: &mut RngStream) -> Result<(Model, TrainReport)> {
    let n_retrain = retrain_count(ds.len(), spec.fraction);
    let n_val = (spec.validation_share * n_retrain as f64).floor() as usize;
    let n_fit = n_retrain - n_val;
    if spec.train.epochs > 0 && (n_fit == 0 || n_val == 0) {
        return Err(Error::Data(format!(
            "retraining slice of {n_retrain} windows is too small to hold out validation windows"
        )));
    }
    let fit: Vec<usize> = (0..n_fit).collect();
    let val: Vec<usize> = (n_fit..n_retrain).collect();
    let trainable = spec.trainable(&model);
    train_on(model, &ds.subset(&fit), &ds.subset(&val), &spec.train, &trainable, rng, &mut |_| {})
}

/// Which target windows an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRegion {
    /// The last 25% of windows.
    TestSplit,
    /// Everything after the leading retraining fraction.
    AfterFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferEvaluation {
    pub dataset: String,
    pub norm_mode: String,
    pub retrained: bool,
    pub metrics: Metrics,
    pub mean_epistemic_std: f64,
    pub mean_aleatoric_std: f64,
    pub timestamps: Vec<i64>,
    /// Targets in flow units.
    pub y_true: Vec<f64>,
    /// Estimates in flow units.
    pub estimates: Vec<UncertaintyEstimate>,
    pub retrain_report: Option<TrainReport>,
}

/// Runs Monte-Carlo uncertainty and metrics on part of the target series,
/// optionally after retraining. With retraining the region must lie after
/// the retraining slice.
pub fn evaluate_transfer(
    model: &Model,
    target: &Series,
    retrain: Option<&TransferSpec>,
    region: EvalRegion,
    passes: usize,
    rng: &mut RngStream,
) -> Result<(Model, TransferEvaluation)> {
    let ds = target_windows(model, target)?;
    let (model, report) = match retrain {
        Some(spec) => {
            spec.validate()?;
            if let EvalRegion::AfterFraction(f) = region {
                if f < spec.fraction {
                    return Err(Error::Config(format!(
                        "evaluation region starts at {f} but retraining uses the first {}",
                        spec.fraction
                    )));
                }
            } else if retrain_count(ds.len(), spec.fraction) > ds.indices(Split::Test)[0] {
                return Err(Error::Config("retraining slice overlaps the test split".into()));
            }
            let (m, r) = retrain_on_windows(model.clone(), &ds, spec, rng)?;
            (m, Some(r))
        }
        None => (model.clone(), None),
    };
    let indices: Vec<usize> = match region {
        EvalRegion::TestSplit => ds.indices(Split::Test),
        EvalRegion::AfterFraction(f) => (retrain_count(ds.len(), f)..ds.len()).collect(),
    };
    if indices.len() < 2 {
        return Err(Error::Data(format!("only {} evaluation windows", indices.len())));
    }
    let eval = ds.subset(&indices);
    let scaler = model_scaler(&model)?;
    let ens = mc_sample(&model, &eval.windows, passes, rng)?;
    let estimates: Vec<UncertaintyEstimate> = decompose(&ens)?.iter().map(|e| e.unscaled(&scaler)).collect();
    let y_true: Vec<f64> = eval.targets.iter().map(|&y| scaler.inverse(y)).collect();
    let preds: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let metrics = compute_metrics(&y_true, &preds)?;
    let n = estimates.len() as f64;
    let evaluation = TransferEvaluation {
        dataset: target.station_id.clone(),
        norm_mode: model.config().norm_mode.name().to_string(),
        retrained: report.is_some(),
        metrics,
        mean_epistemic_std: estimates.iter().map(|e| e.epistemic_std()).sum::<f64>() / n,
        mean_aleatoric_std: estimates.iter().map(|e| e.aleatoric_std()).sum::<f64>() / n,
        timestamps: eval.target_timestamps.clone(),
        y_true,
        estimates,
        retrain_report: report,
    };
    Ok((model, evaluation))
}

/// Long-format comparison table: `dataset,norm_mode,retrain,metric,value`.
pub fn comparison_csv(rows: &[TransferEvaluation]) -> String {
    let mut out = String::from("dataset,norm_mode,retrain,metric,value\n");
    for r in rows {
        let retrain = if r.retrained { "yes" } else { "no" };
        let values = [
            ("rmse", r.metrics.rmse),
            ("mape", r.metrics.mape),
            ("r2", r.metrics.r2),
            ("mean_epistemic_std", r.mean_epistemic_std),
            ("mean_aleatoric_std", r.mean_aleatoric_std),
        ];
        for (name, v) in values {
            let _ = writeln!(out, "{},{},{retrain},{name},{v}", r.dataset, r.norm_mode);
        }
        if r.metrics.mape_excluded > 0 {
            let _ = writeln!(out, "{},{},{retrain},mape_excluded,{}", r.dataset, r.norm_mode, r.metrics.mape_excluded);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare, synth::presets, synth_generate};
    use crate::model::{ModelConfig, NormMode};
    use crate::training::train;

    fn trained(norm: NormMode, epochs: usize) -> (Model, Series) {
        let s = synth_generate(&presets::benchmark(), 3, 4).unwrap();
        let cfg = ModelConfig {
            lstm_units: vec![4],
            dense_units: vec![4, 2],
            lookback: 6,
            norm_mode: norm,
            ..ModelConfig::default()
        };
        let p = prepare(&s, cfg.lookback, cfg.horizon).unwrap();
        let mut model = Model::build(cfg, &mut RngStream::new(1)).unwrap();
        model.set_scaler(p.scaler);
        let tc = TrainConfig {
            epochs,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let (m, _) = train(model, &p.dataset, &tc, &mut RngStream::new(2)).unwrap();
        (m, s)
    }

    fn lstm_bytes(m: &Model) -> Vec<u64> {
        m.group_indices(&[ParamGroup::Lstm, ParamGroup::LstmNorm])
            .iter()
            .flat_map(|&i| m.params()[i].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn lstm_frozen_bitwise() {
        for norm in NormMode::ALL {
            let (model, _) = trained(norm, 2);
            let target = synth_generate(&presets::shifted(), 3, 5).unwrap();
            let spec = TransferSpec {
                train: TrainConfig {
                    epochs: 3,
                    batch_size: 32,
                    ..TrainConfig::default()
                },
                ..TransferSpec::default()
            };
            let (after, report) = transfer_retrain(model.clone(), &target, &spec, &mut RngStream::new(3)).unwrap();
            assert_eq!(report.epochs.len(), 3);
            assert_eq!(lstm_bytes(&after), lstm_bytes(&model), "{norm:?}");
            for i in model.group_indices(&[ParamGroup::Lstm]) {
                assert_eq!(after.spectral_states()[i], model.spectral_states()[i]);
            }
            let dense = model.group_indices(&[ParamGroup::Dense]);
            assert!(dense.iter().any(|&i| after.params()[i] != model.params()[i]));
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (model, _) = trained(NormMode::Layer, 1);
        let target = synth_generate(&presets::shifted(), 3, 5).unwrap();
        let spec = TransferSpec {
            train: TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            ..TransferSpec::default()
        };
        let (after, _) = transfer_retrain(model.clone(), &target, &spec, &mut RngStream::new(3)).unwrap();
        assert_eq!(after, model);
    }

    #[test]
    fn layer_norm_switch_controls_dense_gains() {
        let (model, _) = trained(NormMode::Layer, 1);
        let on = TransferSpec::default().trainable(&model);
        let off = TransferSpec {
            retrain_dense_norm: false,
            ..TransferSpec::default()
        }
        .trainable(&model);
        let dn = model.group_indices(&[ParamGroup::DenseNorm]);
        assert!(!dn.is_empty());
        assert!(dn.iter().all(|i| on.contains(i) && !off.contains(i)));
        assert!(model.group_indices(&[ParamGroup::LstmNorm]).iter().all(|i| !on.contains(i)));
    }

    #[test]
    fn same_series_matches_in_distribution_test() {
        let (model, series) = trained(NormMode::None, 2);
        let (_, eval) = evaluate_transfer(&model, &series, None, EvalRegion::TestSplit, 5, &mut RngStream::new(8)).unwrap();
        let p = prepare(&series, 6, 1).unwrap();
        let test = p.dataset.split_subset(Split::Test);
        assert_eq!(eval.y_true.len(), test.len());
        let ens = mc_sample(&model, &test.windows, 5, &mut RngStream::new(8)).unwrap();
        let preds: Vec<f64> = decompose(&ens).unwrap().iter().map(|e| p.scaler.inverse(e.mean)).collect();
        let y: Vec<f64> = test.targets.iter().map(|&v| p.scaler.inverse(v)).collect();
        let direct = compute_metrics(&y, &preds).unwrap();
        assert!((direct.rmse - eval.metrics.rmse).abs() < 1e-9);
    }

    #[test]
    fn retrain_and_evaluation_windows_are_disjoint() {
        let (model, _) = trained(NormMode::None, 1);
        let target = synth_generate(&presets::shifted(), 3, 5).unwrap();
        let spec = TransferSpec {
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            ..TransferSpec::default()
        };
        let ds = target_windows(&model, &target).unwrap();
        let cut = retrain_count(ds.len(), 0.2);
        let (_, eval) =
            evaluate_transfer(&model, &target, Some(&spec), EvalRegion::AfterFraction(0.2), 3, &mut RngStream::new(1)).unwrap();
        assert_eq!(eval.timestamps.len(), ds.len() - cut);
        assert!(eval.timestamps[0] > ds.target_timestamps[cut - 1]);
        assert!(evaluate_transfer(&model, &target, Some(&spec), EvalRegion::AfterFraction(0.1), 3, &mut RngStream::new(1)).is_err());
        let csv = comparison_csv(&[eval]);
        assert!(csv.lines().nth(1).unwrap().starts_with("shifted,none,yes,rmse,"));
    }
}
