use std::collections::HashSet;

use super::{
    FunctionalConstraint as Fc, LnClass, ModelBuildError, ObjectReference, ServerModel,
    ValueKind, WriteChannel,
};
use crate::model::DataValue;
use crate::plant::PlantConfig;

/// Fixed attribute paths of the household model.
pub mod paths {
    pub const PV_DC_W: &str = "PV1/MMDC1.Watt.mag";
    pub const PV_IRR: &str = "PV1/MMET1.Irr.mag";
    pub const PV_PANEL_TEMP: &str = "PV1/MMET1.PnlTmp.mag";
    pub const PV_AC_W: &str = "PV1/MMXU1.TotW.mag";
    pub const INV_SETPOINT: &str = "PV1/ZINV1.OutWSet.setMag";
    pub const INV_MAX_W: &str = "PV1/ZINV1.MaxW.setMag";
    pub const INV_STATUS: &str = "PV1/ZINV1.InvSt.stVal";
    pub const BAT_W: &str = "BAT1/ZBAT1.Watt.mag";
    pub const BAT_SOC_PCT: &str = "BAT1/ZBAT1.SocPct.mag";
    pub const BAT_MAX_CHARGE: &str = "BAT1/ZBAT1.MaxWCha.setMag";
    pub const BAT_MAX_DISCHARGE: &str = "BAT1/ZBAT1.MaxWDis.setMag";
    pub const BAT_STATUS: &str = "BAT1/ZBAT1.BatSt.stVal";
    pub const BAT_SETPOINT: &str = "BAT1/ZBTC1.WSpt.setMag";
    pub const LOAD_TOTAL_W: &str = "LOAD1/MMXU1.TotW.mag";
    pub const GRID_W: &str = "GRID1/MMXU1.TotW.mag";

    /// Logical node instance of the `idx`-th switchable load (MMXU1 is the total).
    pub fn switch_node(idx: usize) -> String {
        format!("MMXU{}", idx + 2)
    }

    pub fn switch_command(idx: usize) -> String {
        format!("LOAD1/{}.SwSt.ctlVal", switch_node(idx))
    }

    pub fn switch_power(idx: usize) -> String {
        format!("LOAD1/{}.TotW.mag", switch_node(idx))
    }
}

/// Builds the model of the whole installation: PV array with inverter,
/// battery with its charger, loads and the grid meter.
pub fn build_home_model(cfg: &PlantConfig) -> Result<ServerModel, ModelBuildError> {
    let mut seen = HashSet::new();
    for load in &cfg.switchable_loads {
        if load.name.is_empty() {
            return Err(ModelBuildError::InvalidName(load.name.clone()));
        }
        if !seen.insert(load.name.as_str()) {
            return Err(ModelBuildError::Duplicate(load.name.clone()));
        }
    }

    let mut m = ServerModel::new("HEMS");
    let mut add = |path: &str, class: LnClass, kind: ValueKind, fc: Fc| {
        let r: ObjectReference = path
            .parse()
            .map_err(|_| ModelBuildError::InvalidName(path.to_owned()))?;
        m.add_attribute(&r, class, kind, fc)
    };
    use LnClass::*;
    use ValueKind::{Bool, Float32};

    add(paths::PV_DC_W, MMDC, Float32, Fc::MX)?;
    add(paths::PV_IRR, MMET, Float32, Fc::MX)?;
    add(paths::PV_PANEL_TEMP, MMET, Float32, Fc::MX)?;
    add(paths::PV_AC_W, MMXU, Float32, Fc::MX)?;
    add(paths::INV_SETPOINT, ZINV, Float32, Fc::SP)?;
    add(paths::INV_MAX_W, ZINV, Float32, Fc::CF)?;
    add(paths::INV_STATUS, ZINV, Bool, Fc::ST)?;

    add(paths::BAT_W, ZBAT, Float32, Fc::MX)?;
    add(paths::BAT_SOC_PCT, ZBAT, Float32, Fc::MX)?;
    add(paths::BAT_MAX_CHARGE, ZBAT, Float32, Fc::CF)?;
    add(paths::BAT_MAX_DISCHARGE, ZBAT, Float32, Fc::CF)?;
    add(paths::BAT_STATUS, ZBAT, Bool, Fc::ST)?;
    add(paths::BAT_SETPOINT, ZBTC, Float32, Fc::SP)?;

    add(paths::LOAD_TOTAL_W, MMXU, Float32, Fc::MX)?;
    for idx in 0..cfg.switchable_loads.len() {
        add(&paths::switch_power(idx), MMXU, Float32, Fc::MX)?;
        add(&paths::switch_command(idx), MMXU, Bool, Fc::CO)?;
    }
    add(paths::GRID_W, MMXU, Float32, Fc::MX)?;

    let cf = |m: &mut ServerModel, path: &str, v: f64| {
        let r: ObjectReference = path.parse().expect("static path");
        m.write(&r, DataValue::Float32(v as f32), WriteChannel::Config)
            .expect("config attribute");
    };
    cf(&mut m, paths::INV_MAX_W, cfg.pv_peak_w);
    cf(&mut m, paths::BAT_MAX_CHARGE, cfg.bat_max_w);
    cf(&mut m, paths::BAT_MAX_DISCHARGE, cfg.bat_max_w);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::SwitchableLoad;

    #[test]
    fn default_model_layout() {
        let m = build_home_model(&PlantConfig::default()).unwrap();
        let h = m.resolve_str("PV1/MMXU1.TotW.mag").unwrap();
        assert_eq!((h.kind, h.fc), (ValueKind::Float32, Fc::MX));
        let h = m.resolve_str("BAT1/ZBTC1.WSpt.setMag").unwrap();
        assert_eq!((h.kind, h.fc), (ValueKind::Float32, Fc::SP));
        let h = m.resolve_str("LOAD1/MMXU2.SwSt.ctlVal").unwrap();
        assert_eq!((h.kind, h.fc), (ValueKind::Bool, Fc::CO));
        assert_eq!(m.class_of("BAT1", "ZBAT1"), Some(LnClass::ZBAT));
        assert_eq!(m.class_of("PV1", "MMET1"), Some(LnClass::MMET));
        // 7 PV + 6 battery + total load + 2 per switchable load + grid
        assert_eq!(m.references().len(), 7 + 6 + 1 + 2 + 1);
        assert_eq!(
            m.read(&paths::INV_MAX_W.parse().unwrap()).unwrap().0,
            DataValue::Float32(4000.0)
        );
    }

    #[test]
    fn duplicate_load_names_rejected() {
        let cfg = PlantConfig {
            switchable_loads: vec![
                SwitchableLoad::new("L1", 700.0),
                SwitchableLoad::new("L1", 300.0),
            ],
            ..PlantConfig::default()
        };
        assert_eq!(
            build_home_model(&cfg).unwrap_err(),
            ModelBuildError::Duplicate("L1".into())
        );
    }
}
