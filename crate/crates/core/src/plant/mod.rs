//! Discrete-time plant: PV array behind a lagging inverter, battery with SOC
//! dynamics, trace-driven base load, switchable loads and the grid meter.
//!
//! A step runs in two phases. [`sense`] applies the exogenous inputs and the
//! inverter and switch commands latched on the previous step; the controller
//! then reads the measurements and [`actuate`] applies the battery command and
//! closes the power balance. [`plant_step`] runs both phases back to back.

mod physics;
pub mod traces;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{paths, DataValue, ModelError, ObjectReference, SharedModel, WriteChannel};

pub use physics::{
    battery_limits, battery_step, grid_exchange, inverter_step, pv_mppt_power, BatteryLimits,
};
pub use traces::{
    clearsky_weather, load_trace, panel_temperature, read_series_csv, read_series_file,
    ClearSkyParams, IngestError, LoadEvent, LoadProfile, TimeSeries, WeatherSample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchableLoad {
    pub name: String,
    pub power_w: f64,
}

impl SwitchableLoad {
    pub fn new(name: &str, power_w: f64) -> Self {
        Self {
            name: name.to_owned(),
            power_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Peak PV power at 1000 W/m² and 25 °C.
    pub pv_peak_w: f64,
    pub gamma_per_c: f64,
    pub inv_tau_s: f64,
    pub bat_cap_wh: f64,
    /// Charge and discharge limit.
    pub bat_max_w: f64,
    pub bat_round_trip_eff: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
    pub switchable_loads: Vec<SwitchableLoad>,
    pub step_s: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            pv_peak_w: 4000.0,
            gamma_per_c: -0.004,
            inv_tau_s: 10.0,
            bat_cap_wh: 8000.0,
            bat_max_w: 1800.0,
            bat_round_trip_eff: 1.0,
            soc_min: 0.10,
            soc_max: 0.95,
            soc_init: 0.50,
            switchable_loads: vec![SwitchableLoad::new("plug1", 700.0)],
            step_s: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlantConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("SOC window must satisfy 0 <= soc_min < soc_init < soc_max <= 1")]
    SocWindow,
    #[error("round-trip efficiency must be in (0, 1]")]
    Efficiency,
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantConfigError> {
        let positive = [
            ("pv_peak_w", self.pv_peak_w),
            ("inv_tau_s", self.inv_tau_s),
            ("bat_cap_wh", self.bat_cap_wh),
            ("bat_max_w", self.bat_max_w),
            ("step_s", self.step_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PlantConfigError::NotPositive(name));
            }
        }
        if self.switchable_loads.iter().any(|l| !(l.power_w > 0.0)) {
            return Err(PlantConfigError::NotPositive("switchable load power_w"));
        }
        if !(0.0 <= self.soc_min
            && self.soc_min < self.soc_init
            && self.soc_init < self.soc_max
            && self.soc_max <= 1.0)
        {
            return Err(PlantConfigError::SocWindow);
        }
        if !(self.bat_round_trip_eff > 0.0 && self.bat_round_trip_eff <= 1.0) {
            return Err(PlantConfigError::Efficiency);
        }
        Ok(())
    }

    /// Rating of the controlled switchable load (the first one), 0 when none.
    pub fn switch_load_w(&self) -> f64 {
        self.switchable_loads.first().map_or(0.0, |l| l.power_w)
    }
}

/// Commands latched into the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    /// Battery power command, positive = charging. Applied in the same step.
    pub batt_setpoint_w: f64,
    /// Inverter output target. Acts from the next step on.
    pub inv_target_w: f64,
    /// Switchable load command. Acts from the next step on.
    pub switch_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Inverter AC output after lag and curtailment.
    pub p_pv_w: f64,
    /// Available PV power at the maximum power point.
    pub p_pv_mppt_w: f64,
    /// Battery power, positive = charging.
    pub p_batt_w: f64,
    pub soc: f64,
    /// Total load including switched loads.
    pub p_load_w: f64,
    /// Switchable load state in effect during this step.
    pub switch_on: bool,
    /// Grid exchange, positive = injection.
    pub p_grid_w: f64,
    /// Inverter target latched for the next step.
    pub inv_target_w: f64,
    /// Switch command latched for the next step.
    pub switch_cmd: bool,
}

impl PlantState {
    pub fn initial(cfg: &PlantConfig) -> Self {
        Self {
            p_pv_w: 0.0,
            p_pv_mppt_w: 0.0,
            p_batt_w: 0.0,
            soc: cfg.soc_init,
            p_load_w: 0.0,
            switch_on: false,
            p_grid_w: 0.0,
            inv_target_w: cfg.pv_peak_w,
            switch_cmd: false,
        }
    }
}

/// Phase one of a step: measurements available to the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensed {
    pub weather: WeatherSample,
    pub p_pv_mppt_w: f64,
    pub p_pv_w: f64,
    pub p_load_base_w: f64,
    pub p_load_w: f64,
    pub switch_on: bool,
}

pub fn sense(state: &PlantState, weather: WeatherSample, load_w: f64, cfg: &PlantConfig) -> Sensed {
    let mppt = pv_mppt_power(weather.irr_wm2, weather.pnl_tmp_c, cfg);
    let target = state.inv_target_w.clamp(0.0, mppt);
    let p_pv = inverter_step(target, state.p_pv_w, cfg.step_s, mppt, cfg);
    let switch_on = state.switch_cmd;
    let switched = if switch_on { cfg.switch_load_w() } else { 0.0 };
    Sensed {
        weather,
        p_pv_mppt_w: mppt,
        p_pv_w: p_pv,
        p_load_base_w: load_w,
        p_load_w: load_w + switched,
        switch_on,
    }
}

/// Phase two: battery and power balance; latches the remaining commands.
pub fn actuate(state: &PlantState, sensed: &Sensed, cmd: &Actuation, cfg: &PlantConfig) -> PlantState {
    let (p_batt, soc) = battery_step(cmd.batt_setpoint_w, state.soc, cfg.step_s, cfg);
    PlantState {
        p_pv_w: sensed.p_pv_w,
        p_pv_mppt_w: sensed.p_pv_mppt_w,
        p_batt_w: p_batt,
        soc,
        p_load_w: sensed.p_load_w,
        switch_on: sensed.switch_on,
        p_grid_w: grid_exchange(sensed.p_pv_w, sensed.p_load_w, p_batt),
        inv_target_w: cmd.inv_target_w,
        switch_cmd: cmd.switch_on,
    }
}

pub fn plant_step(
    state: &PlantState,
    cmd: &Actuation,
    weather: WeatherSample,
    load_w: f64,
    cfg: &PlantConfig,
) -> PlantState {
    let sensed = sense(state, weather, load_w, cfg);
    actuate(state, &sensed, cmd, cfg)
}

#[derive(Debug, Error, PartialEq)]
pub enum InvariantViolation {
    #[error("power balance broken at t={t_s}: {p_grid_w} != {p_pv_w} - {p_load_w} - {p_batt_w}")]
    PowerBalance {
        t_s: f64,
        p_grid_w: f64,
        p_pv_w: f64,
        p_load_w: f64,
        p_batt_w: f64,
    },
    #[error("SOC {soc} outside [{min}, {max}] at t={t_s}")]
    Soc { t_s: f64, soc: f64, min: f64, max: f64 },
    #[error("battery power {p_w} W beyond limit at t={t_s}")]
    BatteryPower { t_s: f64, p_w: f64 },
}

pub fn check_invariants(state: &PlantState, cfg: &PlantConfig, t_s: f64) -> Result<(), InvariantViolation> {
    if state.p_grid_w != grid_exchange(state.p_pv_w, state.p_load_w, state.p_batt_w) {
        return Err(InvariantViolation::PowerBalance {
            t_s,
            p_grid_w: state.p_grid_w,
            p_pv_w: state.p_pv_w,
            p_load_w: state.p_load_w,
            p_batt_w: state.p_batt_w,
        });
    }
    if !(cfg.soc_min..=cfg.soc_max).contains(&state.soc) {
        return Err(InvariantViolation::Soc {
            t_s,
            soc: state.soc,
            min: cfg.soc_min,
            max: cfg.soc_max,
        });
    }
    if state.p_batt_w.abs() > cfg.bat_max_w {
        return Err(InvariantViolation::BatteryPower {
            t_s,
            p_w: state.p_batt_w,
        });
    }
    Ok(())
}

fn write_f32(model: &SharedModel, path: &str, v: f64) -> Result<(), ModelError> {
    let r: ObjectReference = path.parse()?;
    model.write(&r, DataValue::Float32(v as f32), WriteChannel::Plant)?;
    Ok(())
}

fn write_bool(model: &SharedModel, path: &str, v: bool) -> Result<(), ModelError> {
    let r: ObjectReference = path.parse()?;
    model.write(&r, DataValue::Bool(v), WriteChannel::Plant)?;
    Ok(())
}

/// Publishes phase-one measurements through the plant channel.
pub fn mirror_sensed(model: &SharedModel, sensed: &Sensed, cfg: &PlantConfig) -> Result<(), ModelError> {
    write_f32(model, paths::PV_IRR, sensed.weather.irr_wm2)?;
    write_f32(model, paths::PV_PANEL_TEMP, sensed.weather.pnl_tmp_c)?;
    write_f32(model, paths::PV_DC_W, sensed.p_pv_mppt_w)?;
    write_f32(model, paths::PV_AC_W, sensed.p_pv_w)?;
    write_bool(model, paths::INV_STATUS, sensed.p_pv_w > 0.0)?;
    write_f32(model, paths::LOAD_TOTAL_W, sensed.p_load_w)?;
    for (idx, load) in cfg.switchable_loads.iter().enumerate() {
        let on = idx == 0 && sensed.switch_on;
        write_f32(model, &paths::switch_power(idx), if on { load.power_w } else { 0.0 })?;
    }
    Ok(())
}

/// Publishes phase-two results through the plant channel.
pub fn mirror_state(model: &SharedModel, state: &PlantState) -> Result<(), ModelError> {
    write_f32(model, paths::BAT_W, state.p_batt_w)?;
    write_f32(model, paths::BAT_SOC_PCT, state.soc * 100.0)?;
    write_bool(model, paths::BAT_STATUS, true)?;
    write_f32(model, paths::GRID_W, state.p_grid_w)?;
    Ok(())
}

/// Reads the controller-side setpoints the plant acts on.
pub fn read_actuation(model: &SharedModel) -> Result<Actuation, ModelError> {
    let m = model.lock();
    let f = |path: &str| -> Result<f64, ModelError> {
        let (v, _) = m.read(&path.parse()?)?;
        Ok(v.as_f64().unwrap_or(0.0))
    };
    let switch_on = match m.read(&paths::switch_command(0).parse()?) {
        Ok((v, _)) => v.as_bool().unwrap_or(false),
        Err(ModelError::NotFound(_)) => false,
        Err(e) => return Err(e),
    };
    Ok(Actuation {
        batt_setpoint_w: f(paths::BAT_SETPOINT)?,
        inv_target_w: f(paths::INV_SETPOINT)?,
        switch_on,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_home_model;
    use proptest::prelude::*;

    fn dark() -> WeatherSample {
        WeatherSample {
            t_s: 0.0,
            irr_wm2: 0.0,
            pnl_tmp_c: 20.0,
        }
    }

    fn idle() -> Actuation {
        Actuation {
            batt_setpoint_w: 0.0,
            inv_target_w: 0.0,
            switch_on: false,
        }
    }

    #[test]
    fn zero_inputs_stay_zero() {
        let cfg = PlantConfig::default();
        let s0 = PlantState::initial(&cfg);
        let s1 = plant_step(&s0, &idle(), dark(), 0.0, &cfg);
        assert_eq!((s1.p_pv_w, s1.p_load_w, s1.p_batt_w, s1.p_grid_w), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(s1.soc, cfg.soc_init);
    }

    #[test]
    fn switch_acts_on_next_step() {
        let cfg = PlantConfig::default();
        let s0 = PlantState::initial(&cfg);
        let on = Actuation {
            switch_on: true,
            ..idle()
        };
        let s1 = plant_step(&s0, &on, dark(), 300.0, &cfg);
        assert_eq!(s1.p_load_w, 300.0);
        let s2 = plant_step(&s1, &on, dark(), 300.0, &cfg);
        assert_eq!(s2.p_load_w, 1000.0);
        assert!(s2.switch_on);
    }

    #[test]
    fn config_validation() {
        assert!(PlantConfig::default().validate().is_ok());
        let bad = PlantConfig {
            soc_init: 0.99,
            ..PlantConfig::default()
        };
        assert_eq!(bad.validate(), Err(PlantConfigError::SocWindow));
        let bad = PlantConfig {
            bat_cap_wh: 0.0,
            ..PlantConfig::default()
        };
        assert_eq!(bad.validate(), Err(PlantConfigError::NotPositive("bat_cap_wh")));
    }

    #[test]
    fn mirrors_into_model() {
        let cfg = PlantConfig::default();
        let model = SharedModel::new(build_home_model(&cfg).unwrap());
        let s0 = PlantState::initial(&cfg);
        let w = WeatherSample {
            t_s: 0.0,
            irr_wm2: 1000.0,
            pnl_tmp_c: 25.0,
        };
        let sensed = sense(&s0, w, 500.0, &cfg);
        mirror_sensed(&model, &sensed, &cfg).unwrap();
        let state = actuate(&s0, &sensed, &idle(), &cfg);
        mirror_state(&model, &state).unwrap();
        let read = |p: &str| model.read(&p.parse().unwrap()).unwrap().0;
        assert_eq!(read(paths::PV_DC_W), DataValue::Float32(4000.0));
        assert_eq!(read(paths::LOAD_TOTAL_W), DataValue::Float32(500.0));
        assert_eq!(read(paths::BAT_SOC_PCT), DataValue::Float32(50.0));
        assert_eq!(read(paths::GRID_W), DataValue::Float32(state.p_grid_w as f32));
        let act = read_actuation(&model).unwrap();
        assert_eq!(act.inv_target_w, 0.0);
    }

    proptest! {
        #[test]
        fn balance_and_bounds_hold(
            irr in 0.0f64..1200.0, load in 0.0f64..5000.0,
            batt in -5000.0f64..5000.0, target in -100.0f64..5000.0,
            soc in 0.10f64..=0.95, prev_pv in 0.0f64..4000.0, sw in any::<bool>())
        {
            let cfg = PlantConfig::default();
            let s0 = PlantState { soc, p_pv_w: prev_pv, ..PlantState::initial(&cfg) };
            let cmd = Actuation { batt_setpoint_w: batt, inv_target_w: target, switch_on: sw };
            let w = WeatherSample { t_s: 0.0, irr_wm2: irr, pnl_tmp_c: 30.0 };
            let s1 = plant_step(&s0, &cmd, w, load, &cfg);
            prop_assert!(check_invariants(&s1, &cfg, 0.0).is_ok());
            prop_assert!(s1.p_pv_w <= s1.p_pv_mppt_w);
            let lim = battery_limits(soc, cfg.step_s, &cfg);
            if lim.is_feasible(batt) {
                prop_assert_eq!(s1.p_batt_w, batt);
            }
        }
    }
}
