use serde::{Deserialize, Serialize};

use super::prefs::{Preferences, SwitchBudget, SwitchMode};
use crate::plant::{battery_limits, BatteryLimits, PlantConfig};

/// Errors closer than this are treated as equal when choosing a switch state.
pub const TIE_TOLERANCE_W: f64 = 1e-6;

/// Battery management: absorb surplus, supply deficit, so that the grid
/// exchange follows `p_ref_w`. Positive = charge; the plant clamps.
pub fn battery_controller(p_pv_w: f64, p_load_w: f64, p_ref_w: f64) -> f64 {
    p_pv_w - p_load_w - p_ref_w
}

/// Inverter curtailment: produce only what load, battery and reference absorb.
pub fn curtailment_controller(p_load_w: f64, p_batt_w: f64, p_ref_w: f64, mppt_w: f64) -> f64 {
    (p_load_w + p_batt_w + p_ref_w).clamp(0.0, mppt_w.max(0.0))
}

/// Surplus-driven switching of one controllable load with hysteresis and a
/// daily ON budget.
#[derive(Debug, Clone)]
pub struct LoadController {
    prefs: Preferences,
    load_w: f64,
    on: bool,
    above_s: f64,
    below_s: f64,
    since_change_s: f64,
    budget: SwitchBudget,
}

impl LoadController {
    pub fn new(prefs: Preferences, load_w: f64) -> Self {
        let budget = SwitchBudget::new(prefs.switch_budget_s);
        Self {
            prefs,
            load_w,
            on: false,
            above_s: 0.0,
            below_s: 0.0,
            since_change_s: f64::INFINITY,
            budget,
        }
    }

    pub fn is_on(&self) -> bool {
        self.on
    }

    /// Feeds the surplus measured at `t_s` (PV minus load without the
    /// switched load) and returns the command for the step starting at
    /// `t_s + dt_s`.
    pub fn step(&mut self, surplus_w: f64, t_s: f64, dt_s: f64) -> bool {
        let t_eff = t_s + dt_s;
        let hold = self.prefs.min_switch_hold_s;
        let allowed = self.prefs.in_window(t_eff) && self.budget.available(t_eff, dt_s);

        if surplus_w >= self.load_w {
            self.above_s += dt_s;
        } else {
            self.above_s = 0.0;
        }
        if surplus_w - self.load_w < 0.0 {
            self.below_s += dt_s;
        } else {
            self.below_s = 0.0;
        }
        self.since_change_s += dt_s;

        let next = match self.prefs.switch_mode {
            SwitchMode::Scheduled => allowed,
            SwitchMode::Surplus => {
                let may_change = self.since_change_s >= hold;
                if !allowed {
                    // window and budget are hard limits, hold time does not apply
                    false
                } else if self.on {
                    !(may_change && self.below_s >= hold)
                } else {
                    may_change && self.above_s >= hold
                }
            }
        };
        if next != self.on {
            self.on = next;
            self.since_change_s = 0.0;
        }
        if self.on {
            self.budget.record_on(t_eff, dt_s);
        }
        self.on
    }
}

/// Static prediction for one switch state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub switch_on: bool,
    pub load_w: f64,
    pub batt_w: f64,
    pub inv_target_w: f64,
    pub p_grid_w: f64,
    pub curtailed_w: f64,
    pub error_w: f64,
}

/// Battery first, then curtailment, for a fixed load.
pub fn evaluate_branch(switch_on: bool, load_w: f64, p_ref_w: f64, mppt_w: f64, limits: BatteryLimits) -> Branch {
    let batt = limits.clamp(mppt_w - load_w - p_ref_w);
    let mut target = mppt_w;
    let mut grid = mppt_w - load_w - batt;
    if grid > p_ref_w {
        target = (load_w + batt + p_ref_w).clamp(0.0, mppt_w);
        grid = target - load_w - batt;
    }
    Branch {
        switch_on,
        load_w,
        batt_w: batt,
        inv_target_w: target,
        p_grid_w: grid,
        curtailed_w: mppt_w - target,
        error_w: (grid - p_ref_w).abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketInputs {
    pub p_ref_w: f64,
    pub mppt_w: f64,
    /// Inverter output in this step.
    pub p_pv_w: f64,
    /// Load without the switchable load.
    pub p_load_base_w: f64,
    /// Load in this step, switchable load included.
    pub p_load_w: f64,
    pub soc: f64,
    /// Switching on is permitted (window and budget).
    pub switch_available: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketDecision {
    pub batt_setpoint_w: f64,
    pub inv_target_w: f64,
    pub switch_on: bool,
    pub chosen: Branch,
    pub rejected: Option<Branch>,
}

/// Coordinated tracking of a grid-exchange reference with battery,
/// curtailment and one discrete load.
///
/// Both switch states are predicted with [`evaluate_branch`]; the one with the
/// smaller tracking error wins, equal errors go to the branch that curtails
/// less PV, then to OFF. The battery command itself is computed from the
/// present inverter output and load so it also absorbs the inverter lag.
pub fn market_tracker(inputs: &MarketInputs, switch_load_w: f64, cfg: &PlantConfig) -> MarketDecision {
    let limits = battery_limits(inputs.soc, cfg.step_s, cfg);
    let off = evaluate_branch(false, inputs.p_load_base_w, inputs.p_ref_w, inputs.mppt_w, limits);
    let on = inputs.switch_available.then(|| {
        evaluate_branch(
            true,
            inputs.p_load_base_w + switch_load_w,
            inputs.p_ref_w,
            inputs.mppt_w,
            limits,
        )
    });
    let (chosen, rejected) = match on {
        Some(on) if prefer(&on, &off) => (on, Some(off)),
        Some(on) => (off, Some(on)),
        None => (off, None),
    };
    MarketDecision {
        batt_setpoint_w: limits.clamp(inputs.p_pv_w - inputs.p_load_w - inputs.p_ref_w),
        inv_target_w: chosen.inv_target_w,
        switch_on: chosen.switch_on,
        chosen,
        rejected,
    }
}

fn prefer(candidate: &Branch, incumbent: &Branch) -> bool {
    if candidate.error_w < incumbent.error_w - TIE_TOLERANCE_W {
        return true;
    }
    if candidate.error_w > incumbent.error_w + TIE_TOLERANCE_W {
        return false;
    }
    candidate.curtailed_w < incumbent.curtailed_w - TIE_TOLERANCE_W
}

/// Accumulated |p_grid − p_ref| energy in kWh over uniformly spaced records.
pub fn error_integral(records: &[TrackingRecord], dt_s: f64) -> f64 {
    records
        .iter()
        .map(|r| (r.p_grid_w - r.p_ref_w).abs() * dt_s / 3.6e6)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingRecord {
    pub t_s: f64,
    pub p_grid_w: f64,
    pub p_ref_w: f64,
}
