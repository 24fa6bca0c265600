//! Exogenous inputs: synthetic clear-sky weather, appliance load profiles and
//! `t_s,value` CSV series.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("missing or wrong header, expected {expected:?}")]
    Header { expected: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("series is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    pub t_s: f64,
    pub irr_wm2: f64,
    pub pnl_tmp_c: f64,
}

/// One synthetic day. Times are seconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClearSkyParams {
    pub sunrise_s: f64,
    pub sunset_s: f64,
    pub gmax_wm2: f64,
    pub ambient_c: f64,
}

impl Default for ClearSkyParams {
    fn default() -> Self {
        Self {
            sunrise_s: 6.0 * 3600.0,
            sunset_s: 20.0 * 3600.0,
            gmax_wm2: 1000.0,
            ambient_c: 25.0,
        }
    }
}

impl ClearSkyParams {
    pub fn irradiance(&self, t_s: f64) -> f64 {
        let tod = t_s.rem_euclid(86_400.0);
        let x = (PI * (tod - self.sunrise_s) / (self.sunset_s - self.sunrise_s)).sin();
        if tod <= self.sunrise_s || tod >= self.sunset_s {
            return 0.0;
        }
        self.gmax_wm2 * x.max(0.0).powf(1.2)
    }

    pub fn sample(&self, t_s: f64) -> WeatherSample {
        let irr = self.irradiance(t_s);
        WeatherSample {
            t_s,
            irr_wm2: irr,
            pnl_tmp_c: panel_temperature(self.ambient_c, irr),
        }
    }

    pub fn solar_noon_s(&self) -> f64 {
        0.5 * (self.sunrise_s + self.sunset_s)
    }
}

/// Panel temperature surrogate from ambient temperature and irradiance.
pub fn panel_temperature(ambient_c: f64, irr_wm2: f64) -> f64 {
    ambient_c + 0.03 * irr_wm2
}

/// `n` samples spaced `dt_s` apart starting at `start_s`.
pub fn clearsky_weather(params: &ClearSkyParams, start_s: f64, dt_s: f64, n: usize) -> Vec<WeatherSample> {
    assert!(params.sunrise_s < params.sunset_s, "sunrise must precede sunset");
    (0..n)
        .map(|k| params.sample(start_s + k as f64 * dt_s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadEvent {
    pub start_s: f64,
    pub duration_s: f64,
    pub watts: f64,
}

impl LoadEvent {
    pub fn active_at(&self, t_s: f64) -> bool {
        t_s >= self.start_s && t_s < self.start_s + self.duration_s
    }
}

/// Base consumption plus appliance events; optional Gaussian jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadProfile {
    pub base_w: f64,
    pub events: Vec<LoadEvent>,
    /// Standard deviation of per-sample noise; 0 disables it.
    pub jitter_w: f64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        Self {
            base_w: 1000.0,
            events: Vec::new(),
            jitter_w: 0.0,
        }
    }
}

impl LoadProfile {
    /// Noise-free load at time `t_s` (seconds after midnight of day 0).
    pub fn deterministic_at(&self, t_s: f64) -> f64 {
        self.base_w
            + self
                .events
                .iter()
                .filter(|e| e.active_at(t_s))
                .map(|e| e.watts)
                .sum::<f64>()
    }
}

pub fn load_trace(profile: &LoadProfile, start_s: f64, dt_s: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (profile.jitter_w > 0.0)
        .then(|| Normal::new(0.0, profile.jitter_w).expect("finite jitter"));
    (0..n)
        .map(|k| {
            let p = profile.deterministic_at(start_s + k as f64 * dt_s);
            match &noise {
                Some(d) => (p + d.sample(&mut rng)).max(0.0),
                None => p,
            }
        })
        .collect()
}

/// Piecewise-constant series sampled from `(t, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    points: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, IngestError> {
        if points.is_empty() {
            return Err(IngestError::Empty);
        }
        Ok(Self { points })
    }

    /// Value of the last point at or before `t_s`; the first value before the series starts.
    pub fn sample(&self, t_s: f64) -> f64 {
        let idx = self.points.partition_point(|(t, _)| *t <= t_s);
        self.points[idx.saturating_sub(1)].1
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Parses a two-column CSV with header `t_s,value`; `t_s` must increase strictly.
pub fn read_series_csv(reader: impl Read) -> Result<TimeSeries, IngestError> {
    let rows = read_two_columns(reader, ["t_s", "value"])?;
    for w in rows.windows(2) {
        if w[1].1 .0 <= w[0].1 .0 {
            return Err(IngestError::Row {
                line: w[1].0,
                message: format!("t_s {} does not increase", w[1].1 .0),
            });
        }
    }
    TimeSeries::new(rows.into_iter().map(|(_, p)| p).collect())
}

pub fn read_series_file(path: &Path) -> Result<TimeSeries, IngestError> {
    read_series_csv(std::fs::File::open(path)?)
}

/// Rows of a numeric two-column CSV with the given header, tagged with their
/// 1-based line number.
pub(crate) fn read_two_columns(
    reader: impl Read,
    header: [&str; 2],
) -> Result<Vec<(u64, (f64, f64))>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let expected = header.join(",");
    let hdr = rdr
        .headers()
        .map_err(|_| IngestError::Header { expected: expected.clone() })?;
    if hdr.len() != 2 || hdr.get(0) != Some(header[0]) || hdr.get(1) != Some(header[1]) {
        return Err(IngestError::Header { expected });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(IngestError::Row {
                line,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let num = |i: usize| -> Result<f64, IngestError> {
            let s = &rec[i];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::Row {
                    line,
                    message: format!("{:?} is not a number", s),
                })
        };
        out.push((line, (num(0)?, num(1)?)));
    }
    if out.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(out)
}
