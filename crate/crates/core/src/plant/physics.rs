use super::PlantConfig;

/// Available DC power at the maximum power point, linear temperature derate.
pub fn pv_mppt_power(irr_wm2: f64, panel_temp_c: f64, cfg: &PlantConfig) -> f64 {
    let p = cfg.pv_peak_w * (irr_wm2 / 1000.0) * (1.0 + cfg.gamma_per_c * (panel_temp_c - 25.0));
    p.max(0.0)
}

/// First-order inverter response towards `target_w` over `dt_s`, bounded by
/// the currently available power.
pub fn inverter_step(target_w: f64, prev_out_w: f64, dt_s: f64, mppt_w: f64, cfg: &PlantConfig) -> f64 {
    let alpha = 1.0 - (-dt_s / cfg.inv_tau_s).exp();
    let out = prev_out_w + (target_w - prev_out_w) * alpha;
    out.clamp(0.0, mppt_w.max(0.0))
}

/// Power the battery can take (charge, positive) and give (discharge,
/// positive) over the next `dt_s` without leaving the SOC window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryLimits {
    pub max_charge_w: f64,
    pub max_discharge_w: f64,
}

impl BatteryLimits {
    pub fn clamp(&self, p_w: f64) -> f64 {
        p_w.clamp(-self.max_discharge_w, self.max_charge_w)
    }

    pub fn is_feasible(&self, p_w: f64) -> bool {
        p_w <= self.max_charge_w && p_w >= -self.max_discharge_w
    }
}

fn charge_efficiency(cfg: &PlantConfig) -> f64 {
    cfg.bat_round_trip_eff.sqrt()
}

pub fn battery_limits(soc: f64, dt_s: f64, cfg: &PlantConfig) -> BatteryLimits {
    let eta = charge_efficiency(cfg);
    let wh_per_step = 3600.0 * cfg.bat_cap_wh / dt_s;
    let headroom = ((cfg.soc_max - soc) * wh_per_step / eta).max(0.0);
    let reserve = ((soc - cfg.soc_min) * wh_per_step * eta).max(0.0);
    BatteryLimits {
        max_charge_w: cfg.bat_max_w.min(headroom),
        max_discharge_w: cfg.bat_max_w.min(reserve),
    }
}

/// Applies a battery command (positive = charging). Returns the power
/// actually exchanged and the new SOC.
pub fn battery_step(p_cmd_w: f64, soc: f64, dt_s: f64, cfg: &PlantConfig) -> (f64, f64) {
    let p = battery_limits(soc, dt_s, cfg).clamp(p_cmd_w);
    let eta = charge_efficiency(cfg);
    let stored = if p >= 0.0 { p * eta } else { p / eta };
    let next = soc + stored * dt_s / (3600.0 * cfg.bat_cap_wh);
    (p, next.clamp(cfg.soc_min, cfg.soc_max))
}

/// Grid exchange, positive = injection.
pub fn grid_exchange(p_pv_w: f64, p_load_w: f64, p_batt_w: f64) -> f64 {
    p_pv_w - p_load_w - p_batt_w
}
