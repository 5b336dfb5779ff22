use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

/// Seconds per aggregation bucket.
pub const BUCKET_SECONDS: i64 = 300;
pub const BUCKETS_PER_DAY: usize = 288;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// A flow time series. Timestamps are seconds since the epoch, read as local
/// wall-clock time (no zone conversion is applied). Entries flagged in `gaps`
/// carry a placeholder flow and must not be used as data.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub station_id: String,
    pub timestamps: Vec<i64>,
    pub flow: Vec<f64>,
    pub gaps: Vec<bool>,
}

impl Series {
    pub fn new(station_id: impl Into<String>, timestamps: Vec<i64>, flow: Vec<f64>) -> Result<Series> {
        let gaps = vec![false; flow.len()];
        Series::with_gaps(station_id, timestamps, flow, gaps)
    }

    pub fn with_gaps(station_id: impl Into<String>, timestamps: Vec<i64>, flow: Vec<f64>, gaps: Vec<bool>) -> Result<Series> {
        if timestamps.len() != flow.len() || gaps.len() != flow.len() {
            return Err(Error::Data("timestamp, flow and gap columns differ in length".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "timestamps must be strictly increasing (index {} -> {})",
                i,
                i + 1
            )));
        }
        Ok(Series {
            station_id: station_id.into(),
            timestamps,
            flow,
            gaps,
        })
    }

    pub fn len(&self) -> usize {
        self.flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flow.is_empty()
    }

    pub fn gap_count(&self) -> usize {
        self.gaps.iter().filter(|&&g| g).count()
    }

    /// CSV text with a `timestamp,flow` header; gap entries are omitted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,flow\n");
        for ((t, f), gap) in self.timestamps.iter().zip(&self.flow).zip(&self.gaps) {
            if !gap {
                let _ = writeln!(out, "{t},{f}");
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    /// Rows that arrived earlier than their predecessor and were re-sorted.
    pub out_of_order: usize,
}

/// Parses epoch seconds or an ISO-8601 date-time. Offsets, when present, are
/// honoured; naive date-times are taken as-is.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Parses `timestamp,flow` CSV text. `source` names the input in errors.
pub fn parse_csv(text: &str, source: &str, station_id: &str) -> Result<(Series, LoadReport)> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l),
            None => return Err(parse_err(1, "empty file".into())),
        }
    };
    let cols: Vec<&str> = header.1.split(',').map(str::trim).collect();
    if cols != ["timestamp", "flow"] {
        return Err(parse_err(header.0, format!("expected header `timestamp,flow`, found `{}`", header.1)));
    }

    let mut rows: Vec<(i64, f64, usize)> = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(ts), Some(flow), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(line_no, "expected two fields".into()));
        };
        let ts = parse_timestamp(ts).ok_or_else(|| parse_err(line_no, format!("bad timestamp `{}`", ts.trim())))?;
        let flow: f64 = flow
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad flow `{}`", flow.trim())))?;
        if !flow.is_finite() {
            return Err(parse_err(line_no, "flow is not finite".into()));
        }
        if flow < 0.0 {
            return Err(parse_err(line_no, format!("negative flow {flow}")));
        }
        if let Some(&(prev, _, _)) = rows.last() {
            if ts < prev {
                report.out_of_order += 1;
            }
        }
        rows.push((ts, flow, line_no));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(parse_err(w[1].2, format!("duplicate timestamp {} (also on line {})", w[1].0, w[0].2)));
    }
    let series = Series::new(
        station_id,
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
    )?;
    Ok((series, report))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<(Series, LoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let station = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(&text, &path.display().to_string(), &station)
}

/// Sums counts into aligned 5-minute buckets. A bucket missing any of its
/// expected sub-samples (or containing a flagged sample) is flagged as a gap;
/// buckets with no samples at all are inserted as gaps with zero flow.
pub fn aggregate_5min(raw: &Series) -> Result<Series> {
    if raw.is_empty() {
        return Ok(raw.clone());
    }
    let cadence = raw
        .timestamps
        .windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .unwrap_or(BUCKET_SECONDS)
        .min(BUCKET_SECONDS);
    if BUCKET_SECONDS % cadence != 0 {
        return Err(Error::Data(format!(
            "sampling cadence of {cadence}s does not divide {BUCKET_SECONDS}s"
        )));
    }
    let expected = (BUCKET_SECONDS / cadence) as usize;
    let bucket_of = |t: i64| t.div_euclid(BUCKET_SECONDS) * BUCKET_SECONDS;
    let first = bucket_of(raw.timestamps[0]);
    let last = bucket_of(*raw.timestamps.last().expect("non-empty"));
    let n = ((last - first) / BUCKET_SECONDS + 1) as usize;

    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut flagged = vec![false; n];
    for ((&t, &f), &gap) in raw.timestamps.iter().zip(&raw.flow).zip(&raw.gaps) {
        let b = ((bucket_of(t) - first) / BUCKET_SECONDS) as usize;
        if gap {
            flagged[b] = true;
        } else {
            sums[b] += f;
            counts[b] += 1;
        }
    }
    let timestamps = (0..n).map(|b| first + b as i64 * BUCKET_SECONDS).collect();
    let gaps = (0..n).map(|b| flagged[b] || counts[b] < expected).collect();
    Series::with_gaps(raw.station_id.clone(), timestamps, sums, gaps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_row_file() {
        let (s, report) = parse_csv("timestamp,flow\n0,10\n300,12.5\n", "t.csv", "t").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.flow, vec![10.0, 12.5]);
        assert_eq!(report.out_of_order, 0);
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let (s, report) = parse_csv("timestamp,flow\n600,3\n0,1\n300,2\n", "t.csv", "t").unwrap();
        assert_eq!(s.timestamps, vec![0, 300, 600]);
        assert_eq!(s.flow, vec![1.0, 2.0, 3.0]);
        assert_eq!(report.out_of_order, 1);
    }

    #[test]
    fn negative_flow_reports_line() {
        let err = parse_csv("timestamp,flow\n0,1\n300,-4\n", "t.csv", "t").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unparseable_and_duplicate_rows() {
        assert!(matches!(
            parse_csv("timestamp,flow\n0,1\nabc,2\n", "t.csv", "t"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_csv("timestamp,flow\n0,1\n0,2\n", "t.csv", "t"),
            Err(Error::Parse { .. })
        ));
        assert!(parse_csv("time,value\n0,1\n", "t.csv", "t").is_err());
    }

    #[test]
    fn iso_timestamps() {
        assert_eq!(parse_timestamp("1970-01-01T00:05:00"), Some(300));
        assert_eq!(parse_timestamp("1970-01-01 01:00:00"), Some(3600));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00"), Some(0));
        assert_eq!(parse_timestamp("86400"), Some(86_400));
    }

    #[test]
    fn thirty_second_samples_sum_into_bucket() {
        let ts: Vec<i64> = (0..10).map(|i| i * 30).collect();
        let s = Series::new("x", ts, vec![1.0; 10]).unwrap();
        let agg = aggregate_5min(&s).unwrap();
        assert_eq!(agg.flow, vec![10.0]);
        assert_eq!(agg.gaps, vec![false]);
    }

    #[test]
    fn missing_sub_sample_flags_bucket() {
        let ts: Vec<i64> = (0..20).filter(|&i| i != 13).map(|i| i * 30).collect();
        let s = Series::new("x", ts, vec![1.0; 19]).unwrap();
        let agg = aggregate_5min(&s).unwrap();
        assert_eq!(agg.flow, vec![10.0, 9.0]);
        assert_eq!(agg.gaps, vec![false, true]);
    }

    #[test]
    fn five_minute_input_passes_through() {
        let s = Series::new("x", vec![0, 300, 600], vec![4.0, 5.0, 6.0]).unwrap();
        let agg = aggregate_5min(&s).unwrap();
        assert_eq!(agg, s);
    }

    #[test]
    fn missing_buckets_are_inserted_as_gaps() {
        let s = Series::new("x", vec![0, 300, 1200], vec![4.0, 5.0, 6.0]).unwrap();
        let agg = aggregate_5min(&s).unwrap();
        assert_eq!(agg.timestamps, vec![0, 300, 600, 900, 1200]);
        assert_eq!(agg.gaps, vec![false, false, true, true, false]);
    }

    #[test]
    fn csv_round_trip_skips_gaps() {
        let s = Series::with_gaps("x", vec![0, 300, 600], vec![1.5, 0.0, 2.25], vec![false, true, false]).unwrap();
        let (back, _) = parse_csv(&s.to_csv(), "mem", "x").unwrap();
        assert_eq!(back.timestamps, vec![0, 600]);
        assert_eq!(back.flow, vec![1.5, 2.25]);
    }
}
