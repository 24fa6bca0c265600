//! Run configuration, loaded from a single TOML file.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::aggregator::{PeerConfig, RecSynthParams};
use crate::goose::MulticastConfig;
use crate::hems::{Preferences, Scenario};
use crate::plant::{ClearSkyParams, LoadProfile, PlantConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub duration_s: f64,
    /// Time of day of the first step, in seconds after midnight.
    #[serde(default)]
    pub start_s: f64,
    /// Only drives synthetic trace jitter.
    #[serde(default)]
    pub seed: u64,
    /// Constant grid exchange reference for scenarios without an aggregator.
    #[serde(default)]
    pub p_ref_w: f64,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub preferences: Preferences,
    #[serde(default)]
    pub traces: TracesConfig,
    #[serde(default)]
    pub transports: TransportConfig,
    #[serde(default)]
    pub aggregator: Option<AggregatorConfig>,
}

/// Exogenous inputs. CSV files, when given, replace the synthetic source of
/// the same quantity. Relative paths resolve against the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracesConfig {
    pub clear_sky: ClearSkyParams,
    pub irradiance_csv: Option<PathBuf>,
    pub panel_temp_csv: Option<PathBuf>,
    pub load: LoadProfile,
    pub load_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    /// Everything in one thread on the simulation clock; deterministic.
    #[default]
    InProcess,
    /// TCP, HTTP and UDP multicast on the loopback interface.
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub mode: TransportMode,
    pub bind: Ipv4Addr,
    /// 0 picks a free port.
    pub acsi_port: u16,
    pub broker_port: u16,
    pub goose_group: Ipv4Addr,
    pub goose_port: u16,
    /// Network mode only: hold each step until its wall-clock slot.
    pub wall_clock: bool,
}

impl Default for TransportConfig {
    fn default() -> Self {
        let mc = MulticastConfig::default();
        Self {
            mode: TransportMode::InProcess,
            bind: Ipv4Addr::LOCALHOST,
            acsi_port: crate::acsi::DEFAULT_PORT,
            broker_port: crate::broker::DEFAULT_PORT,
            goose_group: mc.group,
            goose_port: mc.port,
            wall_clock: true,
        }
    }
}

impl TransportConfig {
    pub fn multicast(&self) -> MulticastConfig {
        MulticastConfig {
            group: self.goose_group,
            port: self.goose_port,
            interface: self.bind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    /// Community exchange per interval (`interval,p_rec_w`); synthesized when absent.
    pub rec_csv: Option<PathBuf>,
    pub rec_synth: RecSynthParams,
    /// Target community exchange per interval, repeating; empty means zero.
    pub target_w: Vec<f64>,
    pub peers: PeerConfig,
    /// How long before an interval starts its setpoints are dispatched.
    pub lead_s: f64,
    pub prosumer_id: String,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            rec_csv: None,
            rec_synth: RecSynthParams::default(),
            target_w: Vec::new(),
            peers: PeerConfig::default(),
            lead_s: 60.0,
            prosumer_id: "home".into(),
        }
    }
}

impl RunConfig {
    /// Minimal valid configuration for `scenario`.
    pub fn new(scenario: Scenario, duration_s: f64) -> Self {
        Self {
            scenario,
            duration_s,
            start_s: 0.0,
            seed: 0,
            p_ref_w: 0.0,
            plant: PlantConfig::default(),
            preferences: Preferences::default(),
            traces: TracesConfig::default(),
            transports: TransportConfig::default(),
            aggregator: (scenario == Scenario::Market).then(AggregatorConfig::default),
        }
    }

    /// Parses and validates; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.traces.irradiance_csv);
        fix(&mut self.traces.panel_temp_csv);
        fix(&mut self.traces.load_csv);
        if let Some(agg) = &mut self.aggregator {
            fix(&mut agg.rec_csv);
        }
    }

    /// Number of simulation steps.
    pub fn steps(&self) -> usize {
        (self.duration_s / self.plant.step_s).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.plant
            .validate()
            .map_err(|e| HarnessError::Config(format!("[plant] {e}")))?;
        self.preferences
            .validate()
            .map_err(|e| HarnessError::Config(format!("[preferences] {e}")))?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive".into());
        }
        let n = self.duration_s / self.plant.step_s;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return bad("duration_s must be a whole number of steps".into());
        }
        if !self.start_s.is_finite() || self.start_s < 0.0 {
            return bad("start_s must be a non-negative time".into());
        }
        if !self.p_ref_w.is_finite() {
            return bad("p_ref_w must be finite".into());
        }
        let cs = &self.traces.clear_sky;
        if !(cs.sunrise_s < cs.sunset_s) {
            return bad("[traces.clear_sky] sunrise must precede sunset".into());
        }
        if self.traces.load.jitter_w < 0.0 {
            return bad("[traces.load] jitter_w must not be negative".into());
        }
        let needs_switch = matches!(self.scenario, Scenario::Load);
        if needs_switch && self.plant.switchable_loads.is_empty() {
            return bad("scenario load needs at least one switchable load".into());
        }
        match (&self.aggregator, self.scenario) {
            (None, Scenario::Market) => {
                return bad("scenario market requires an [aggregator] section".into())
            }
            (Some(a), Scenario::Market) => {
                if !(a.lead_s >= 0.0 && a.lead_s < crate::aggregator::INTERVAL_S) {
                    return bad("[aggregator] lead_s must be within [0, 900)".into());
                }
                if a.prosumer_id.is_empty() || a.prosumer_id.starts_with("peer") {
                    return bad("[aggregator] prosumer_id must be non-empty and not start with \"peer\"".into());
                }
                if a.target_w.iter().any(|t| !t.is_finite()) {
                    return bad("[aggregator] target_w must be finite".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}
