use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::controllers::{
    battery_controller, curtailment_controller, market_tracker, LoadController, MarketDecision,
    MarketInputs,
};
use super::prefs::{Preferences, SwitchBudget};
use crate::acsi::{AcsiClient, AcsiError};
use crate::model::{paths, DataValue, ObjectReference};
use crate::plant::PlantConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Battery follows the reference, PV at full output.
    Battery,
    /// Inverter curtailment follows the reference, battery idle.
    Inverter,
    /// Surplus switching of the controllable load.
    Load,
    /// Battery, curtailment and load coordinated on an aggregator reference.
    Market,
}

#[derive(Debug, Error)]
pub enum HemsError {
    #[error("{path}: {source}")]
    Acsi {
        path: String,
        #[source]
        source: AcsiError,
    },
    #[error("{0} does not hold a number")]
    NotNumeric(String),
}

/// Measurements as the controller sees them over ACSI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub p_pv_w: f64,
    pub p_pv_mppt_w: f64,
    pub p_load_w: f64,
    pub p_switch_w: f64,
    pub p_batt_w: f64,
    pub soc: f64,
}

impl Measurements {
    pub fn p_load_base_w(&self) -> f64 {
        self.p_load_w - self.p_switch_w
    }
}

/// What one control step decided and wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct HemsStep {
    pub measured: Measurements,
    pub batt_setpoint_w: f64,
    pub inv_target_w: f64,
    pub switch_on: bool,
    pub market: Option<MarketDecision>,
}

struct Refs {
    pv_ac: ObjectReference,
    pv_dc: ObjectReference,
    load: ObjectReference,
    switch_w: Option<ObjectReference>,
    batt_w: ObjectReference,
    soc: ObjectReference,
    batt_sp: ObjectReference,
    inv_sp: ObjectReference,
    switch_cmd: Option<ObjectReference>,
}

fn parse(path: &str) -> ObjectReference {
    // the home model paths are compile-time constants
    path.parse().expect("static model path")
}

/// HEMS bound to one installation through an ACSI client.
pub struct HemsAgent<C> {
    client: C,
    scenario: Scenario,
    cfg: PlantConfig,
    prefs: Preferences,
    refs: Refs,
    load_ctrl: LoadController,
    budget: SwitchBudget,
}

impl<C: AcsiClient> HemsAgent<C> {
    pub fn new(client: C, scenario: Scenario, cfg: PlantConfig, prefs: Preferences) -> Self {
        let has_switch = !cfg.switchable_loads.is_empty();
        let refs = Refs {
            pv_ac: parse(paths::PV_AC_W),
            pv_dc: parse(paths::PV_DC_W),
            load: parse(paths::LOAD_TOTAL_W),
            switch_w: has_switch.then(|| parse(&paths::switch_power(0))),
            batt_w: parse(paths::BAT_W),
            soc: parse(paths::BAT_SOC_PCT),
            batt_sp: parse(paths::BAT_SETPOINT),
            inv_sp: parse(paths::INV_SETPOINT),
            switch_cmd: has_switch.then(|| parse(&paths::switch_command(0))),
        };
        let load_ctrl = LoadController::new(prefs.clone(), cfg.switch_load_w());
        let budget = SwitchBudget::new(prefs.switch_budget_s);
        Self {
            client,
            scenario,
            cfg,
            prefs,
            refs,
            load_ctrl,
            budget,
        }
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn client_mut(&mut self) -> &mut C {
        &mut self.client
    }

    fn read_f64(&mut self, r: &ObjectReference) -> Result<f64, HemsError> {
        let (v, _) = self.client.read(r).map_err(|source| HemsError::Acsi {
            path: r.to_string(),
            source,
        })?;
        v.as_f64().ok_or_else(|| HemsError::NotNumeric(r.to_string()))
    }

    fn write(&mut self, r: &ObjectReference, v: DataValue) -> Result<(), HemsError> {
        self.client.write(r, v).map_err(|source| HemsError::Acsi {
            path: r.to_string(),
            source,
        })
    }

    pub fn measure(&mut self) -> Result<Measurements, HemsError> {
        let r = &self.refs;
        let (pv_ac, pv_dc, load, batt_w, soc) = (
            r.pv_ac.clone(),
            r.pv_dc.clone(),
            r.load.clone(),
            r.batt_w.clone(),
            r.soc.clone(),
        );
        let switch_w = r.switch_w.clone();
        Ok(Measurements {
            p_pv_w: self.read_f64(&pv_ac)?,
            p_pv_mppt_w: self.read_f64(&pv_dc)?,
            p_load_w: self.read_f64(&load)?,
            p_switch_w: match switch_w {
                Some(s) => self.read_f64(&s)?,
                None => 0.0,
            },
            p_batt_w: self.read_f64(&batt_w)?,
            soc: self.read_f64(&soc)? / 100.0,
        })
    }

    /// One control step at simulation time `t_s` against reference `p_ref_w`.
    /// Reads measurements, runs the scenario law and writes the setpoints.
    pub fn step(&mut self, t_s: f64, p_ref_w: f64) -> Result<HemsStep, HemsError> {
        let m = self.measure()?;
        let dt = self.cfg.step_s;
        let (batt, inv, switch_on, market) = match self.scenario {
            Scenario::Battery => (
                battery_controller(m.p_pv_w, m.p_load_w, p_ref_w),
                self.cfg.pv_peak_w,
                false,
                None,
            ),
            Scenario::Inverter => (
                0.0,
                curtailment_controller(m.p_load_w, m.p_batt_w, p_ref_w, m.p_pv_mppt_w),
                false,
                None,
            ),
            Scenario::Load => {
                let on = self.load_ctrl.step(m.p_pv_w - m.p_load_base_w(), t_s, dt);
                (0.0, self.cfg.pv_peak_w, on, None)
            }
            Scenario::Market => {
                let t_eff = t_s + dt;
                let available = self.refs.switch_cmd.is_some()
                    && self.prefs.in_window(t_eff)
                    && self.budget.available(t_eff, dt);
                let d = market_tracker(
                    &MarketInputs {
                        p_ref_w,
                        mppt_w: m.p_pv_mppt_w,
                        p_pv_w: m.p_pv_w,
                        p_load_base_w: m.p_load_base_w(),
                        p_load_w: m.p_load_w,
                        soc: m.soc,
                        switch_available: available,
                    },
                    self.cfg.switch_load_w(),
                    &self.cfg,
                );
                if d.switch_on {
                    self.budget.record_on(t_eff, dt);
                }
                (d.batt_setpoint_w, d.inv_target_w, d.switch_on, Some(d))
            }
        };
        let (batt_sp, inv_sp) = (self.refs.batt_sp.clone(), self.refs.inv_sp.clone());
        self.write(&batt_sp, DataValue::Float32(batt as f32))?;
        self.write(&inv_sp, DataValue::Float32(inv as f32))?;
        if let Some(sw) = self.refs.switch_cmd.clone() {
            self.write(&sw, DataValue::Bool(switch_on))?;
        }
        Ok(HemsStep {
            measured: m,
            batt_setpoint_w: batt,
            inv_target_w: inv,
            switch_on,
            market,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acsi::LocalAcsiClient;
    use crate::model::{build_home_model, SharedModel, WriteChannel};

    fn setup(scenario: Scenario) -> (SharedModel, HemsAgent<LocalAcsiClient>) {
        let cfg = PlantConfig::default();
        let model = SharedModel::new(build_home_model(&cfg).unwrap());
        let agent = HemsAgent::new(LocalAcsiClient::new(model.clone()), scenario, cfg, Preferences::default());
        (model, agent)
    }

    fn plant_write(model: &SharedModel, path: &str, v: f32) {
        model
            .write(&path.parse().unwrap(), DataValue::Float32(v), WriteChannel::Plant)
            .unwrap();
    }

    #[test]
    fn battery_scenario_writes_setpoint() {
        let (model, mut agent) = setup(Scenario::Battery);
        plant_write(&model, paths::PV_AC_W, 400.0);
        plant_write(&model, paths::LOAD_TOTAL_W, 1000.0);
        plant_write(&model, paths::BAT_SOC_PCT, 50.0);
        let step = agent.step(0.0, 0.0).unwrap();
        assert_eq!(step.batt_setpoint_w, -600.0);
        let (v, _) = model.read(&paths::BAT_SETPOINT.parse().unwrap()).unwrap();
        assert_eq!(v, DataValue::Float32(-600.0));
    }

    #[test]
    fn inverter_scenario_curtails() {
        let (model, mut agent) = setup(Scenario::Inverter);
        plant_write(&model, paths::PV_DC_W, 3000.0);
        plant_write(&model, paths::LOAD_TOTAL_W, 1000.0);
        let step = agent.step(0.0, -500.0).unwrap();
        assert_eq!(step.inv_target_w, 500.0);
        assert_eq!(step.batt_setpoint_w, 0.0);
    }

    #[test]
    fn market_scenario_reports_branches() {
        let (model, mut agent) = setup(Scenario::Market);
        plant_write(&model, paths::PV_DC_W, 1000.0);
        plant_write(&model, paths::PV_AC_W, 1000.0);
        plant_write(&model, paths::LOAD_TOTAL_W, 800.0);
        plant_write(&model, paths::BAT_SOC_PCT, 50.0);
        let step = agent.step(0.0, -2000.0).unwrap();
        assert!(step.switch_on);
        assert!(step.market.unwrap().rejected.is_some());
        let (v, _) = model.read(&paths::switch_command(0).parse().unwrap()).unwrap();
        assert_eq!(v, DataValue::Bool(true));
    }
}
