use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use uqcast_core::analysis::{
    compute_metrics, dispersion_csv, feature_dispersion, input_gradients, label_regimes, metrics_csv, SaliencyMap,
};
use uqcast_core::data::{
    aggregate_5min, load_csv, prepare, prepare_with_scaler, presets, rank_stations, similarity_report, synth_generate,
    Series, Split, SynthProfile,
};
use uqcast_core::model::{load_model, save_model, Model};
use uqcast_core::numerics::{OpKind, RngStream};
use uqcast_core::training::{train_on, TrainConfig};
use uqcast_core::transfer::{comparison_csv, evaluate_transfer, EvalRegion, TransferEvaluation, TransferSpec};
use uqcast_core::uncertainty::{
    decompose, estimates_csv, mc_sample, summarize_uncertainty, summary_csv, UncertaintyEstimate,
};
use uqcast_core::verify::{run_verify, VerifyOptions};

use crate::config::RunConfig;
use crate::svg::{band_chart, ChartSeries};
use crate::{UsageError, VerificationFailed};

const SECONDS_PER_HOUR: i64 = 3600;

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| uqcast_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| uqcast_core::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable") + "\n"
}

/// Loads a CSV and buckets it to 5 minutes; already-bucketed data passes
/// through unchanged.
fn load_series(path: &Path) -> anyhow::Result<Series> {
    let (raw, report) = load_csv(path)?;
    if report.out_of_order > 0 {
        eprintln!("{}: re-sorted {} out-of-order rows", path.display(), report.out_of_order);
    }
    let series = aggregate_5min(&raw)?;
    if series.gap_count() > 0 {
        eprintln!("{}: {} incomplete 5-minute buckets", path.display(), series.gap_count());
    }
    Ok(series)
}

pub fn synth(profile: &str, days: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    if days == 0 {
        return Err(UsageError("--days must be at least 1".into()).into());
    }
    let profile = match presets::by_name(profile) {
        Some(p) if !Path::new(profile).exists() => p,
        _ => SynthProfile::load(profile)?,
    };
    let series = synth_generate(&profile, days, seed)?;
    series.write_csv(out)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    station_id: String,
    parameters: usize,
    train_windows: usize,
    val_windows: usize,
    test_windows: usize,
    dropped_for_gaps: usize,
    best_epoch: Option<usize>,
    best_val_loss: Option<f64>,
}

pub fn train(config: Option<&Path>, data: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if data.is_some() {
        cfg.data = data;
    }
    if out.is_some() {
        cfg.out_dir = out;
    }
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| UsageError("no data file: pass --data or set `data` in the config".into()))?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| UsageError("no output directory: pass --out or set `out_dir` in the config".into()))?;
    let model_cfg = cfg.model_config();
    model_cfg.validate()?;
    let train_cfg: TrainConfig = cfg.train_config();
    train_cfg.validate()?;

    let series = load_series(&data)?;
    let prepared = prepare(&series, model_cfg.lookback, model_cfg.horizon)?;
    let ds = &prepared.dataset;
    let mut model = Model::build(model_cfg, &mut RngStream::with_stream(cfg.seed, 1))?;
    model.set_scaler(prepared.scaler);
    let all: Vec<usize> = (0..model.params().len()).collect();
    let (model, report) = train_on(
        model,
        &ds.split_subset(Split::Train),
        &ds.split_subset(Split::Val),
        &train_cfg,
        &all,
        &mut RngStream::with_stream(cfg.seed, 2),
        &mut |e| eprintln!("epoch {:>4}  train {:.6}  val {:.6}", e.epoch, e.train_loss, e.val_loss),
    )?;

    create_dir(&out)?;
    save_model(&model, out.join("model.json"))?;
    write(&out.join("loss.csv"), &report.to_csv())?;
    write(&out.join("resolved_config.json"), &cfg.to_json())?;
    let summary = TrainSummary {
        station_id: series.station_id.clone(),
        parameters: model.parameter_count(),
        train_windows: ds.count(Split::Train),
        val_windows: ds.count(Split::Val),
        test_windows: ds.count(Split::Test),
        dropped_for_gaps: ds.dropped_for_gaps,
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss(),
    };
    write(&out.join("summary.json"), &to_json(&summary))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct UqArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub passes: usize,
    pub seed: u64,
    pub span_start: Option<i64>,
    pub span_hours: u32,
    pub out: PathBuf,
}

fn check_passes(passes: usize) -> anyhow::Result<()> {
    if passes < 2 {
        return Err(UsageError(format!(
            "--passes {passes}: epistemic variance needs at least 2 Monte-Carlo passes"
        ))
        .into());
    }
    Ok(())
}

pub fn uq(args: &UqArgs) -> anyhow::Result<()> {
    check_passes(args.passes)?;
    let model = load_model(&args.model)?;
    let scaler = *model
        .scaler()
        .ok_or_else(|| uqcast_core::Error::Data("checkpoint carries no scaler".into()))?;
    let cfg = model.config().clone();
    let series = load_series(&args.data)?;
    let prepared = prepare_with_scaler(&series, cfg.lookback, cfg.horizon, scaler)?;
    let test = prepared.dataset.split_subset(Split::Test);
    if test.len() < 2 {
        return Err(uqcast_core::Error::Data(format!("only {} test windows", test.len())).into());
    }

    let ens = mc_sample(&model, &test.windows, args.passes, &mut RngStream::with_stream(args.seed, 3))?;
    let estimates: Vec<UncertaintyEstimate> = decompose(&ens)?.iter().map(|e| e.unscaled(&scaler)).collect();
    let y_true: Vec<f64> = test.targets.iter().map(|&y| scaler.inverse(y)).collect();
    let preds: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let metrics = compute_metrics(&y_true, &preds)?;
    let ts = &test.target_timestamps;
    let regimes = label_regimes(ts);

    create_dir(&args.out)?;
    write(&args.out.join("uncertainty.csv"), &estimates_csv(ts, &y_true, &estimates))?;
    write(
        &args.out.join("metrics.csv"),
        &metrics_csv(&[(cfg.norm_mode.name().to_string(), metrics)]),
    )?;

    let mut rows = summarize_uncertainty(&estimates, None)?;
    match summarize_uncertainty(&estimates, Some(&regimes)) {
        Ok(per_regime) => rows.extend(per_regime),
        Err(e) => eprintln!("per-regime summary skipped: {e}"),
    }
    write(&args.out.join("summary.csv"), &summary_csv(&rows))?;

    let start = args.span_start.unwrap_or(ts[0]);
    let end = start + i64::from(args.span_hours) * SECONDS_PER_HOUR;
    let span: Vec<usize> = (0..ts.len()).filter(|&i| ts[i] >= start && ts[i] < end).collect();
    if span.is_empty() {
        return Err(UsageError(format!("no test samples in the chart span starting at {start}")).into());
    }
    let pick = |v: &dyn Fn(usize) -> f64| span.iter().map(|&i| v(i)).collect::<Vec<f64>>();
    let chart_ts: Vec<i64> = span.iter().map(|&i| ts[i]).collect();
    let observed = pick(&|i| y_true[i]);
    let mean = pick(&|i| estimates[i].mean);
    let lower = pick(&|i| estimates[i].lower95);
    let upper = pick(&|i| estimates[i].upper95);
    let chart = band_chart(
        &format!("{} ({}): mean and 95% interval", series.station_id, cfg.norm_mode.name()),
        &ChartSeries {
            timestamps: &chart_ts,
            observed: &observed,
            mean: &mean,
            lower: &lower,
            upper: &upper,
        },
    );
    write(&args.out.join("chart.svg"), &chart)?;

    let saliency = SaliencyMap::new(ts.clone(), input_gradients(&model, &test.windows)?);
    write(&args.out.join("saliency.csv"), &saliency.to_csv())?;
    match feature_dispersion(&model, &test.windows, &regimes) {
        Ok(stats) => write(&args.out.join("dispersion.csv"), &dispersion_csv(&stats))?,
        Err(e) => eprintln!("feature dispersion skipped: {e}"),
    }
    write(&args.out.join("resolved_config.json"), &to_json(args))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferArgs {
    pub model: PathBuf,
    pub target: PathBuf,
    pub retrain: bool,
    pub fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub freeze_dense_norm: bool,
    pub passes: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn transfer(args: &TransferArgs) -> anyhow::Result<()> {
    check_passes(args.passes)?;
    let model = load_model(&args.model)?;
    let target = load_series(&args.target)?;
    let mut rows: Vec<TransferEvaluation> = Vec::new();

    if args.retrain {
        let spec = TransferSpec {
            fraction: args.fraction,
            train: TrainConfig {
                epochs: args.epochs,
                batch_size: args.batch_size,
                ..TrainConfig::default()
            },
            retrain_dense_norm: !args.freeze_dense_norm,
            ..TransferSpec::default()
        };
        spec.validate()?;
        let region = EvalRegion::AfterFraction(args.fraction);
        let (_, baseline) = evaluate_transfer(
            &model,
            &target,
            None,
            region,
            args.passes,
            &mut RngStream::with_stream(args.seed, 4),
        )?;
        let (retrained, evaluation) = evaluate_transfer(
            &model,
            &target,
            Some(&spec),
            region,
            args.passes,
            &mut RngStream::with_stream(args.seed, 5),
        )?;
        create_dir(&args.out)?;
        save_model(&retrained, args.out.join("model_retrained.json"))?;
        if let Some(report) = &evaluation.retrain_report {
            write(&args.out.join("retrain_loss.csv"), &report.to_csv())?;
        }
        rows.push(baseline);
        rows.push(evaluation);
    } else {
        let (_, baseline) = evaluate_transfer(
            &model,
            &target,
            None,
            EvalRegion::TestSplit,
            args.passes,
            &mut RngStream::with_stream(args.seed, 4),
        )?;
        create_dir(&args.out)?;
        rows.push(baseline);
    }

    for row in &rows {
        let name = if row.retrained {
            "uncertainty_retrained.csv"
        } else {
            "uncertainty_no_retrain.csv"
        };
        write(&args.out.join(name), &estimates_csv(&row.timestamps, &row.y_true, &row.estimates))?;
    }
    write(&args.out.join("comparison.csv"), &comparison_csv(&rows))?;
    write(&args.out.join("resolved_config.json"), &to_json(args))?;
    Ok(())
}

#[derive(Serialize)]
struct RankingEntry<'a> {
    rank: usize,
    station_id: &'a str,
    median_kl: f64,
    median_correlation: f64,
}

#[derive(Serialize)]
struct SimilarityOutput<'a> {
    train: &'a Path,
    candidates: &'a [PathBuf],
    days: usize,
    ranking: Vec<RankingEntry<'a>>,
}

pub fn similarity(train: &Path, candidates: &[PathBuf], days: usize, out: &Path) -> anyhow::Result<()> {
    if days == 0 {
        return Err(UsageError("--days must be at least 1".into()).into());
    }
    let reference = load_series(train)?;
    let mut reports = Vec::with_capacity(candidates.len());
    for path in candidates {
        let candidate = load_series(path)?;
        reports.push(similarity_report(&reference, &candidate, days).with_context(|| path.display().to_string())?);
    }
    let order = rank_stations(&reports);

    create_dir(out)?;
    for (path, report) in candidates.iter().zip(&reports) {
        let stem = path.file_stem().map_or_else(|| report.station_id.clone(), |s| s.to_string_lossy().into_owned());
        write(&out.join(format!("similarity_{stem}.csv")), &report.to_csv())?;
    }
    let ranking: Vec<RankingEntry<'_>> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| RankingEntry {
            rank: rank + 1,
            station_id: &reports[i].station_id,
            median_kl: reports[i].median_kl,
            median_correlation: reports[i].median_correlation,
        })
        .collect();
    let mut csv = String::from("rank,station_id,median_kl,median_correlation\n");
    for r in &ranking {
        csv.push_str(&format!("{},{},{},{}\n", r.rank, r.station_id, r.median_kl, r.median_correlation));
    }
    write(&out.join("ranking.csv"), &csv)?;
    let echo = SimilarityOutput {
        train,
        candidates,
        days,
        ranking,
    };
    write(&out.join("similarity.json"), &to_json(&echo))?;
    Ok(())
}

pub fn verify(fast: bool, corrupt_rule: Option<&str>) -> anyhow::Result<()> {
    let corrupt_rule = match corrupt_rule {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let known: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            UsageError(format!("unknown rule `{name}`; expected one of {}", known.join(", ")))
        })?),
        None => None,
    };
    let report = run_verify(VerifyOptions { fast, corrupt_rule });
    for check in &report.checks {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(VerificationFailed(report.failures().iter().map(|c| c.name.clone()).collect()).into())
    }
}
