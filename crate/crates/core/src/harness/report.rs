//! Per-step records, the CSV writer and the run metrics.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::aggregator::INTERVAL_S;
use crate::hems::{MarketDecision, Measurements};
use crate::plant::IngestError;

pub const CSV_HEADER: &str =
    "t_s,p_load_w,p_pv_w,p_pv_mppt_w,p_batt_w,p_grid_w,p_ref_w,soc_pct,switch_state";

const J_PER_KWH: f64 = 3.6e6;

/// Everything observed in one step. The CSV carries a subset.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t_s: f64,
    pub p_load_w: f64,
    pub p_pv_w: f64,
    pub p_pv_mppt_w: f64,
    pub p_batt_w: f64,
    pub p_grid_w: f64,
    pub p_ref_w: f64,
    pub soc: f64,
    pub switch_on: bool,
    pub p_load_base_w: f64,
    /// Setpoints as the plant received them.
    pub batt_cmd_w: f64,
    pub inv_target_w: f64,
    /// What the controller saw.
    pub measured: Measurements,
    pub market: Option<MarketDecision>,
}

/// One CSV row, as parsed back.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CsvRow {
    pub t_s: f64,
    pub p_load_w: f64,
    pub p_pv_w: f64,
    pub p_pv_mppt_w: f64,
    pub p_batt_w: f64,
    pub p_grid_w: f64,
    pub p_ref_w: f64,
    pub soc_pct: f64,
    pub switch_state: u8,
}

impl From<&StepRecord> for CsvRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            t_s: r.t_s,
            p_load_w: r.p_load_w,
            p_pv_w: r.p_pv_w,
            p_pv_mppt_w: r.p_pv_mppt_w,
            p_batt_w: r.p_batt_w,
            p_grid_w: r.p_grid_w,
            p_ref_w: r.p_ref_w,
            soc_pct: r.soc * 100.0,
            switch_state: u8::from(r.switch_on),
        }
    }
}

/// Writes the step table. Floats use the shortest representation that
/// parses back to the same value, so metrics can be recomputed exactly.
pub fn write_csv(records: &[StepRecord], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let c = CsvRow::from(r);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            c.t_s, c.p_load_w, c.p_pv_w, c.p_pv_mppt_w, c.p_batt_w, c.p_grid_w, c.p_ref_w, c.soc_pct, c.switch_state
        )?;
    }
    Ok(())
}

pub fn read_csv(reader: impl Read) -> Result<Vec<CsvRow>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| IngestError::Row { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(IngestError::Header { expected: CSV_HEADER.into() });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| IngestError::Row {
                line: i as u64 + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntervalMetrics {
    pub interval: usize,
    pub start_s: f64,
    pub mean_p_ref_w: f64,
    pub mean_p_grid_w: f64,
    pub energy_error_kwh: f64,
}

/// Counters from the communication side of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransportStats {
    pub goose_frames_sent: u64,
    pub goose_states_received: u64,
    pub bridge_attrs_forwarded: u64,
    pub bridge_commands_written: u64,
    pub ledger_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunMetrics {
    pub steps: usize,
    pub step_s: f64,
    pub energy_error_kwh: f64,
    pub injected_kwh: f64,
    pub absorbed_kwh: f64,
    pub switch_on_seconds: f64,
    pub soc_start: f64,
    pub soc_end: f64,
    pub per_interval: Vec<IntervalMetrics>,
    #[serde(default)]
    pub transport: TransportStats,
}

/// Accumulated |p_grid − p_ref| energy of CSV rows, in kWh.
pub fn energy_error_kwh(rows: &[CsvRow], step_s: f64) -> f64 {
    rows.iter()
        .map(|r| (r.p_grid_w - r.p_ref_w).abs() * step_s / J_PER_KWH)
        .sum()
}

/// Metrics of a run. Tracking intervals are the aggregator's 900 s slots,
/// counted from midnight of day 0.
pub fn compute_metrics(records: &[StepRecord], step_s: f64, soc_start: f64) -> RunMetrics {
    let rows: Vec<CsvRow> = records.iter().map(CsvRow::from).collect();
    let kwh = |w: f64| w * step_s / J_PER_KWH;
    let slot = |t: f64| (t / INTERVAL_S).floor() as usize;
    let k0 = rows.first().map_or(0, |r| slot(r.t_s));
    let mut per_interval: Vec<IntervalMetrics> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for r in &rows {
        let k = slot(r.t_s) - k0;
        while per_interval.len() <= k {
            let abs = k0 + per_interval.len();
            per_interval.push(IntervalMetrics {
                interval: abs,
                start_s: abs as f64 * INTERVAL_S,
                mean_p_ref_w: 0.0,
                mean_p_grid_w: 0.0,
                energy_error_kwh: 0.0,
            });
            counts.push(0);
        }
        let m = &mut per_interval[k];
        m.mean_p_ref_w += r.p_ref_w;
        m.mean_p_grid_w += r.p_grid_w;
        m.energy_error_kwh += kwh((r.p_grid_w - r.p_ref_w).abs());
        counts[k] += 1;
    }
    for (m, n) in per_interval.iter_mut().zip(&counts) {
        m.mean_p_ref_w /= *n as f64;
        m.mean_p_grid_w /= *n as f64;
    }
    RunMetrics {
        steps: rows.len(),
        step_s,
        energy_error_kwh: energy_error_kwh(&rows, step_s),
        injected_kwh: rows.iter().map(|r| kwh(r.p_grid_w.max(0.0))).sum(),
        absorbed_kwh: rows.iter().map(|r| kwh((-r.p_grid_w).max(0.0))).sum(),
        switch_on_seconds: rows.iter().filter(|r| r.switch_state == 1).count() as f64 * step_s,
        soc_start,
        soc_end: records.last().map_or(soc_start, |r| r.soc),
        per_interval,
        transport: TransportStats::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t_s: f64, p_grid_w: f64, p_ref_w: f64, on: bool) -> StepRecord {
        StepRecord {
            t_s,
            p_load_w: 1000.0,
            p_pv_w: 1000.0 + p_grid_w,
            p_pv_mppt_w: 4000.0,
            p_batt_w: 0.0,
            p_grid_w,
            p_ref_w,
            soc: 0.5,
            switch_on: on,
            p_load_base_w: 1000.0,
            batt_cmd_w: 0.0,
            inv_target_w: 4000.0,
            measured: Measurements {
                p_pv_w: 0.0,
                p_pv_mppt_w: 0.0,
                p_load_w: 0.0,
                p_switch_w: 0.0,
                p_batt_w: 0.0,
                soc: 0.5,
            },
            market: None,
        }
    }

    #[test]
    fn metrics_and_csv_roundtrip() {
        let records: Vec<StepRecord> = (0..1800)
            .map(|i| rec(i as f64, if i % 2 == 0 { 100.1 } else { -0.3 }, 0.0, i < 10))
            .collect();
        let m = compute_metrics(&records, 1.0, 0.5);
        assert_eq!(m.steps, 1800);
        assert_eq!(m.per_interval.len(), 2);
        assert_eq!(m.switch_on_seconds, 10.0);
        approx::assert_relative_eq!(m.injected_kwh, 900.0 * 100.1 / 3.6e6, max_relative = 1e-9);
        approx::assert_relative_eq!(m.absorbed_kwh, 900.0 * 0.3 / 3.6e6, max_relative = 1e-9);
        approx::assert_relative_eq!(m.energy_error_kwh, m.injected_kwh + m.absorbed_kwh, max_relative = 1e-9);

        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        let rows = read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 1800);
        assert_eq!(energy_error_kwh(&rows, 1.0), m.energy_error_kwh);
    }

    #[test]
    fn header_checked() {
        assert!(matches!(read_csv("a,b\n1,2\n".as_bytes()), Err(IngestError::Header { .. })));
    }
}
