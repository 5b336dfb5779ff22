//! Day-by-day comparison of flow distributions between stations.
//!
//! Each day's flows are binned into a shared-range histogram and compared
//! with the Kullback-Leibler divergence; the daily profiles are also
//! correlated (Pearson). Stations are ranked by median daily divergence.

use serde::{Deserialize, Serialize};

use super::series::{Series, BUCKETS_PER_DAY, BUCKET_SECONDS, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::stats;

pub const KL_BINS: usize = 50;
/// Added to every histogram count before normalisation.
pub const KL_SMOOTHING: f64 = 1e-10;

/// Bin counts over `[lo, hi]` with `bins` equal-width bins; the top edge is
/// inclusive. A degenerate range puts everything in the first bin.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &x in samples {
        let b = if width > 0.0 {
            (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
        } else {
            0
        };
        counts[b] += 1.0;
    }
    counts
}

/// `D(P||Q) = sum p_i ln(p_i / q_i)` after adding `eps` to every count and
/// normalising.
pub fn kl_from_counts(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let p_total: f64 = p.iter().map(|c| c + eps).sum();
    let q_total: f64 = q.iter().map(|c| c + eps).sum();
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(pc, qc)| {
            let pi = (pc + eps) / p_total;
            let qi = (qc + eps) / q_total;
            pi * (pi / qi).ln()
        })
        .sum();
    kl.max(0.0)
}

/// Histogram KL divergence of two samples on their shared range.
pub fn kl_divergence(p_samples: &[f64], q_samples: &[f64], bins: usize) -> Result<f64> {
    if p_samples.is_empty() || q_samples.is_empty() || bins == 0 {
        return Err(Error::Data("kl_divergence needs non-empty samples and at least one bin".into()));
    }
    let all = p_samples.iter().chain(q_samples);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let p = histogram(p_samples, lo, hi, bins);
    let q = histogram(q_samples, lo, hi, bins);
    Ok(kl_from_counts(&p, &q, KL_SMOOTHING))
}

/// Complete days (all 288 buckets present, none flagged), keyed by the
/// midnight timestamp, in chronological order.
pub fn full_days(series: &Series) -> Vec<(i64, Vec<f64>)> {
    let mut days: Vec<(i64, Vec<Option<f64>>)> = Vec::new();
    for ((&t, &f), &gap) in series.timestamps.iter().zip(&series.flow).zip(&series.gaps) {
        let day = t.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
        let offset = t - day;
        if offset % BUCKET_SECONDS != 0 {
            continue;
        }
        if days.last().map(|d| d.0) != Some(day) {
            days.push((day, vec![None; BUCKETS_PER_DAY]));
        }
        let slot = (offset / BUCKET_SECONDS) as usize;
        days.last_mut().expect("pushed").1[slot] = (!gap).then_some(f);
    }
    days.into_iter()
        .filter_map(|(day, vals)| vals.into_iter().collect::<Option<Vec<f64>>>().map(|v| (day, v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySimilarity {
    pub day: usize,
    pub reference_day_start: i64,
    pub candidate_day_start: i64,
    pub kl: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub station_id: String,
    pub days: Vec<DaySimilarity>,
    pub median_kl: f64,
    pub median_correlation: f64,
}

impl SimilarityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,kl,correlation\n");
        for d in &self.days {
            out.push_str(&format!("{},{},{}\n", d.day, d.kl, d.correlation));
        }
        out
    }
}

/// Compares the first `days` complete days of each series pairwise.
pub fn similarity_report(training: &Series, candidate: &Series, days: usize) -> Result<SimilarityReport> {
    if days == 0 {
        return Err(Error::Config("similarity needs at least one day".into()));
    }
    let reference = full_days(training);
    let other = full_days(candidate);
    for (name, found) in [(&training.station_id, reference.len()), (&candidate.station_id, other.len())] {
        if found < days {
            return Err(Error::Data(format!(
                "station `{name}` has {found} complete days, {days} required"
            )));
        }
    }
    let per_day: Vec<DaySimilarity> = reference
        .iter()
        .zip(&other)
        .take(days)
        .enumerate()
        .map(|(day, ((ref_start, ref_vals), (cand_start, cand_vals)))| {
            Ok(DaySimilarity {
                day,
                reference_day_start: *ref_start,
                candidate_day_start: *cand_start,
                kl: kl_divergence(ref_vals, cand_vals, KL_BINS)?,
                correlation: stats::pearson(ref_vals, cand_vals),
            })
        })
        .collect::<Result<_>>()?;
    let kls: Vec<f64> = per_day.iter().map(|d| d.kl).collect();
    let cors: Vec<f64> = per_day.iter().map(|d| d.correlation).collect();
    Ok(SimilarityReport {
        station_id: candidate.station_id.clone(),
        median_kl: stats::median(&kls),
        median_correlation: stats::median(&cors),
        days: per_day,
    })
}

/// Report indices ordered from most to least similar (ascending median KL).
pub fn rank_stations(reports: &[SimilarityReport]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].median_kl.total_cmp(&reports[b].median_kl));
    order
}
