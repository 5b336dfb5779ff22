//! Synthetic 5-minute traffic flow.
//!
//! A profile describes one station's average weekday as a daily sinusoid
//! plus Gaussian bumps for the rush hours. The shape can be skewed toward
//! low flows with a power transform and the whole day can be shifted in
//! time. Noise is Gaussian with a standard deviation that grows linearly with
//! the clean flow, so the true aleatoric level of every point is known.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::series::{Series, BUCKETS_PER_DAY, BUCKET_SECONDS, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub hour: f64,
    pub width_hours: f64,
    pub height: f64,
}

/// `sigma(t) = base_sigma + proportional * clean(t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSchedule {
    pub base_sigma: f64,
    pub proportional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub station_id: String,
    /// First timestamp; must fall on midnight.
    pub start_timestamp: i64,
    pub base: f64,
    pub daily_amplitude: f64,
    /// Hour at which the daily sinusoid peaks.
    pub daily_peak_hour: f64,
    pub peaks: Vec<Peak>,
    pub noise: NoiseSchedule,
    /// 0 leaves the shape alone; larger values push mass toward low flows.
    pub skew: f64,
    /// Delays the whole daily pattern by this many hours.
    pub shift_hours: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            station_id: "synthetic".into(),
            start_timestamp: 0,
            base: 180.0,
            daily_amplitude: 120.0,
            daily_peak_hour: 14.0,
            peaks: vec![
                Peak {
                    hour: 8.0,
                    width_hours: 1.0,
                    height: 120.0,
                },
                Peak {
                    hour: 17.5,
                    width_hours: 1.5,
                    height: 90.0,
                },
            ],
            noise: NoiseSchedule::default(),
            skew: 0.0,
            shift_hours: 0.0,
        }
    }
}

/// Circular distance between two hours of the day.
fn hour_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("profile `{}`: {msg}", self.station_id)));
        if self.start_timestamp.rem_euclid(SECONDS_PER_DAY) != 0 {
            return fail(format!("start_timestamp {} is not a midnight", self.start_timestamp));
        }
        let numbers = [self.base, self.daily_amplitude, self.daily_peak_hour, self.skew, self.shift_hours];
        if numbers.iter().any(|x| !x.is_finite()) {
            return fail("non-finite field".into());
        }
        if self.base < 0.0 || self.daily_amplitude < 0.0 {
            return fail("base and daily_amplitude must be non-negative".into());
        }
        if self.skew < 0.0 {
            return fail(format!("skew must be non-negative, got {}", self.skew));
        }
        if self.noise.base_sigma < 0.0 || self.noise.proportional < 0.0 {
            return fail("noise terms must be non-negative".into());
        }
        for p in &self.peaks {
            if !(p.width_hours > 0.0 && p.height.is_finite() && p.hour.is_finite()) {
                return fail(format!("bad peak {p:?}"));
            }
        }
        Ok(())
    }

    /// Unskewed, unclipped daily shape at an hour of the day.
    fn shape(&self, hour: f64) -> f64 {
        let h = hour - self.shift_hours;
        let cycle = self.daily_amplitude * (2.0 * PI * (h - self.daily_peak_hour) / 24.0).cos();
        let bumps: f64 = self
            .peaks
            .iter()
            .map(|p| {
                let z = hour_distance(h, p.hour) / p.width_hours;
                p.height * (-0.5 * z * z).exp()
            })
            .sum();
        (self.base + cycle + bumps).max(0.0)
    }

    /// Largest unskewed value over a day, used to anchor the skew transform.
    fn shape_max(&self) -> f64 {
        (0..BUCKETS_PER_DAY)
            .map(|b| self.shape(b as f64 * 24.0 / BUCKETS_PER_DAY as f64))
            .fold(0.0, f64::max)
    }

    fn clean_with(&self, hour: f64, top: f64) -> f64 {
        let v = self.shape(hour);
        if self.skew == 0.0 || top == 0.0 {
            v
        } else {
            top * (v / top).powf(1.0 + self.skew)
        }
    }

    /// Noise-free flow at an hour of the day.
    pub fn clean_flow(&self, hour: f64) -> f64 {
        self.clean_with(hour, self.shape_max())
    }

    /// True noise standard deviation at an hour of the day.
    pub fn sigma(&self, hour: f64) -> f64 {
        self.noise.base_sigma + self.noise.proportional * self.clean_flow(hour)
    }

    pub fn from_json(text: &str) -> Result<SynthProfile> {
        let p: SynthProfile = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad profile: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SynthProfile> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynthProfile::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialises")
    }
}

pub fn hour_of_day(timestamp: i64) -> f64 {
    timestamp.rem_euclid(SECONDS_PER_DAY) as f64 / 3600.0
}

/// Generates `days` days of 5-minute flow. Negative draws are clipped to 0.
pub fn synth_generate(profile: &SynthProfile, days: usize, seed: u64) -> Result<Series> {
    profile.validate()?;
    if days == 0 {
        return Err(Error::Config("days must be at least 1".into()));
    }
    let n = days * BUCKETS_PER_DAY;
    let top = profile.shape_max();
    let day_shape: Vec<(f64, f64)> = (0..BUCKETS_PER_DAY)
        .map(|b| {
            let hour = b as f64 * 24.0 / BUCKETS_PER_DAY as f64;
            let clean = profile.clean_with(hour, top);
            (clean, profile.noise.base_sigma + profile.noise.proportional * clean)
        })
        .collect();
    let mut rng = RngStream::new(seed);
    let timestamps = (0..n as i64).map(|i| profile.start_timestamp + i * BUCKET_SECONDS).collect();
    let flow = (0..n)
        .map(|i| {
            let (clean, sigma) = day_shape[i % BUCKETS_PER_DAY];
            if sigma > 0.0 {
                (clean + sigma * rng.normal()).max(0.0)
            } else {
                clean
            }
        })
        .collect();
    Series::new(profile.station_id.clone(), timestamps, flow)
}

/// Named profiles shipped with the tool.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 7] = [
        "sinusoid",
        "heteroscedastic",
        "benchmark",
        "station_near",
        "station_mid",
        "station_far",
        "shifted",
    ];

    pub fn by_name(name: &str) -> Option<SynthProfile> {
        Some(match name {
            "sinusoid" => sinusoid(),
            "heteroscedastic" => heteroscedastic(),
            "benchmark" => benchmark(),
            "station_near" => distorted("station_near", 1),
            "station_mid" => distorted("station_mid", 2),
            "station_far" => distorted("station_far", 3),
            "shifted" => shifted(),
            _ => return None,
        })
    }

    /// Noiseless pure daily cycle.
    pub fn sinusoid() -> SynthProfile {
        SynthProfile {
            station_id: "sinusoid".into(),
            peaks: Vec::new(),
            ..SynthProfile::default()
        }
    }

    /// Noise that grows strongly with flow, on the double-peak shape.
    pub fn heteroscedastic() -> SynthProfile {
        SynthProfile {
            station_id: "heteroscedastic".into(),
            noise: NoiseSchedule {
                base_sigma: 2.0,
                proportional: 0.12,
            },
            ..SynthProfile::default()
        }
    }

    /// The reference training station.
    pub fn benchmark() -> SynthProfile {
        SynthProfile {
            station_id: "benchmark".into(),
            noise: NoiseSchedule {
                base_sigma: 8.0,
                proportional: 0.08,
            },
            ..SynthProfile::default()
        }
    }

    /// Benchmark distorted in `level` steps: lower volume, a flatter morning
    /// peak and increasing skew toward low flows.
    pub fn distorted(id: &str, level: u32) -> SynthProfile {
        let k = f64::from(level);
        let mut p = benchmark();
        p.station_id = id.into();
        p.base *= 1.0 - 0.15 * k;
        p.daily_amplitude *= 1.0 - 0.1 * k;
        p.peaks[0].height *= 1.0 - 0.2 * k;
        p.skew = 0.5 * k;
        p
    }

    /// Benchmark with both rush-hour peaks two hours later; the daily cycle
    /// stays put.
    pub fn shifted() -> SynthProfile {
        let base = benchmark();
        SynthProfile {
            station_id: "shifted".into(),
            peaks: base.peaks.iter().map(|p| Peak { hour: p.hour + 2.0, ..*p }).collect(),
            ..base
        }
    }
}
