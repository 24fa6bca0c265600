//! Home energy management: the four control scenarios and the tracking
//! error metric.

mod agent;
mod controllers;
mod prefs;

pub use agent::{HemsAgent, HemsError, HemsStep, Measurements, Scenario};
pub use controllers::{
    battery_controller, curtailment_controller, error_integral, evaluate_branch, market_tracker,
    Branch, LoadController, MarketDecision, MarketInputs, TrackingRecord, TIE_TOLERANCE_W,
};
pub use prefs::{Preferences, PreferencesError, SwitchBudget, SwitchMode, TimeWindow};
