use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::plant::traces::read_two_columns;
use crate::plant::{pv_mppt_power, ClearSkyParams, IngestError, PlantConfig};

pub const INTERVAL_S: f64 = 900.0;

/// Net exchange of the energy community per interval, positive = injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecProfile {
    pub interval_s: f64,
    pub p_rec_w: Vec<f64>,
}

impl RecProfile {
    /// Value for `interval_idx`; the profile repeats when shorter than the run.
    pub fn at(&self, interval_idx: usize) -> f64 {
        if self.p_rec_w.is_empty() {
            return 0.0;
        }
        self.p_rec_w[interval_idx % self.p_rec_w.len()]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("interval_idx,p_rec_w\n");
        for (i, p) in self.p_rec_w.iter().enumerate() {
            s.push_str(&format!("{i},{p}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecSynthParams {
    pub n_houses: u32,
    pub pv_fraction: f64,
    /// PV peak of one house with PV.
    pub pv_peak_w: f64,
    pub gamma_per_c: f64,
    pub base_load_w: f64,
    pub day: ClearSkyParams,
    /// Resolution of the interval means.
    pub sample_s: f64,
}

impl Default for RecSynthParams {
    fn default() -> Self {
        Self {
            n_houses: 35,
            pv_fraction: 0.6,
            pv_peak_w: 4000.0,
            gamma_per_c: -0.004,
            base_load_w: 1000.0,
            day: ClearSkyParams::default(),
            sample_s: 60.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RecSynthError {
    #[error("n_houses must be at least 1")]
    NoHouses,
    #[error("pv_fraction must be within [0, 1]")]
    PvFraction,
    #[error("sunrise must precede sunset")]
    Day,
    #[error("sample_s must divide the interval")]
    Sampling,
}

/// Interval means of `n·f·P_pv(t) − n·P_base`, starting at midnight.
pub fn rec_profile_synth(params: &RecSynthParams, n_intervals: usize) -> Result<RecProfile, RecSynthError> {
    if params.n_houses == 0 {
        return Err(RecSynthError::NoHouses);
    }
    if !(0.0..=1.0).contains(&params.pv_fraction) {
        return Err(RecSynthError::PvFraction);
    }
    if !(params.day.sunrise_s < params.day.sunset_s) {
        return Err(RecSynthError::Day);
    }
    let per = INTERVAL_S / params.sample_s;
    if !(per >= 1.0 && per.fract() == 0.0) {
        return Err(RecSynthError::Sampling);
    }
    let per = per as usize;
    let pv_cfg = PlantConfig {
        pv_peak_w: params.pv_peak_w,
        gamma_per_c: params.gamma_per_c,
        ..PlantConfig::default()
    };
    let n = f64::from(params.n_houses);
    let p_rec_w = (0..n_intervals)
        .map(|k| {
            let sum: f64 = (0..per)
                .map(|j| {
                    let t = k as f64 * INTERVAL_S + (j as f64 + 0.5) * params.sample_s;
                    let w = params.day.sample(t);
                    let pv = pv_mppt_power(w.irr_wm2, w.pnl_tmp_c, &pv_cfg);
                    n * params.pv_fraction * pv - n * params.base_load_w
                })
                .sum();
            sum / per as f64
        })
        .collect();
    Ok(RecProfile {
        interval_s: INTERVAL_S,
        p_rec_w,
    })
}

/// Parses `interval_idx,p_rec_w` rows; indices must run 0, 1, 2, …
pub fn read_rec_csv(reader: impl Read) -> Result<RecProfile, IngestError> {
    let rows = read_two_columns(reader, ["interval_idx", "p_rec_w"])?;
    let mut p_rec_w = Vec::with_capacity(rows.len());
    for (expected, (line, (idx, p))) in rows.into_iter().enumerate() {
        if idx != expected as f64 {
            return Err(IngestError::Row {
                line,
                message: format!("interval_idx {idx}, expected {expected}"),
            });
        }
        p_rec_w.push(p);
    }
    Ok(RecProfile {
        interval_s: INTERVAL_S,
        p_rec_w,
    })
}

pub fn read_rec_file(path: &Path) -> Result<RecProfile, IngestError> {
    read_rec_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_pv_is_pure_consumption() {
        let p = RecSynthParams {
            pv_fraction: 0.0,
            ..RecSynthParams::default()
        };
        let prof = rec_profile_synth(&p, 96).unwrap();
        assert!(prof.p_rec_w.iter().all(|v| *v == -35_000.0));
    }

    #[test]
    fn night_absorbs_noon_injects() {
        let p = RecSynthParams::default();
        let prof = rec_profile_synth(&p, 96).unwrap();
        assert_eq!(prof.p_rec_w[0], -35_000.0);
        assert_eq!(prof.p_rec_w[90], -35_000.0);
        // interval 52 spans 13:00-13:15, around solar noon of a 06-20 day
        let noon = prof.p_rec_w[52];
        let t = 52.0 * 900.0 + 450.0;
        let w = p.day.sample(t);
        let pv = 4000.0 * w.irr_wm2 / 1000.0 * (1.0 - 0.004 * (w.pnl_tmp_c - 25.0));
        assert!((noon - (35.0 * 0.6 * pv - 35_000.0)).abs() < 200.0);
        assert!(noon > 30_000.0);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = |p: RecSynthParams| rec_profile_synth(&p, 1).unwrap_err();
        assert_eq!(bad(RecSynthParams { n_houses: 0, ..Default::default() }), RecSynthError::NoHouses);
        assert_eq!(bad(RecSynthParams { pv_fraction: 1.5, ..Default::default() }), RecSynthError::PvFraction);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let prof = RecProfile {
            interval_s: INTERVAL_S,
            p_rec_w: vec![-1.5, 2.0, 3.25],
        };
        let back = read_rec_csv(prof.to_csv().as_bytes()).unwrap();
        assert_eq!(back, prof);
        let err = read_rec_csv("interval_idx,p_rec_w\n0,1\n2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Row { line: 3, .. }), "{err:?}");
        let err = read_rec_csv("interval_idx,p_rec_w\n0,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Row { line: 2, .. }));
    }
}
