use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Daily window `[start_s, end_s)` in seconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn contains(&self, time_of_day_s: f64) -> bool {
        time_of_day_s >= self.start_s && time_of_day_s < self.end_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    /// Switch on sustained PV surplus.
    #[default]
    Surplus,
    /// Switch on for every window while budget remains.
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preferences {
    /// Symmetric grid exchange capacity offered to the aggregator.
    pub cap_w: f64,
    /// Daily ON time allowed for the switchable load.
    pub switch_budget_s: f64,
    /// Empty means any time of day.
    pub switch_windows: Vec<TimeWindow>,
    pub min_switch_hold_s: f64,
    pub switch_mode: SwitchMode,
}

impl Default for Preferences {
    fn default() -> Self {
        Self {
            cap_w: 2000.0,
            switch_budget_s: 7200.0,
            switch_windows: Vec::new(),
            min_switch_hold_s: 300.0,
            switch_mode: SwitchMode::Surplus,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PreferencesError {
    #[error("{0} must not be negative")]
    Negative(&'static str),
    #[error("window {0:?} is empty or outside the day")]
    BadWindow(TimeWindow),
    #[error("windows overlap")]
    Overlap,
}

impl Preferences {
    pub fn validate(&self) -> Result<(), PreferencesError> {
        if !(self.cap_w >= 0.0) {
            return Err(PreferencesError::Negative("cap_w"));
        }
        if !(self.switch_budget_s >= 0.0) {
            return Err(PreferencesError::Negative("switch_budget_s"));
        }
        if !(self.min_switch_hold_s >= 0.0) {
            return Err(PreferencesError::Negative("min_switch_hold_s"));
        }
        for w in &self.switch_windows {
            if !(0.0 <= w.start_s && w.start_s < w.end_s && w.end_s <= 86_400.0) {
                return Err(PreferencesError::BadWindow(*w));
            }
        }
        let mut sorted = self.switch_windows.clone();
        sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        if sorted.windows(2).any(|p| p[1].start_s < p[0].end_s) {
            return Err(PreferencesError::Overlap);
        }
        Ok(())
    }

    pub fn in_window(&self, t_s: f64) -> bool {
        let tod = t_s.rem_euclid(86_400.0);
        self.switch_windows.is_empty() || self.switch_windows.iter().any(|w| w.contains(tod))
    }
}

/// Daily ON-time accounting for the switchable load. Times passed in are the
/// start of the step in which the switch state takes effect.
#[derive(Debug, Clone)]
pub struct SwitchBudget {
    budget_s: f64,
    day: i64,
    on_today_s: f64,
}

impl SwitchBudget {
    pub fn new(budget_s: f64) -> Self {
        Self {
            budget_s,
            day: i64::MIN,
            on_today_s: 0.0,
        }
    }

    fn roll(&mut self, t_s: f64) {
        let day = (t_s / 86_400.0).floor() as i64;
        if day != self.day {
            self.day = day;
            self.on_today_s = 0.0;
        }
    }

    /// Whether one more step of `dt_s` fits the budget of the day of `t_s`.
    pub fn available(&mut self, t_s: f64, dt_s: f64) -> bool {
        self.roll(t_s);
        self.on_today_s + dt_s <= self.budget_s
    }

    pub fn record_on(&mut self, t_s: f64, dt_s: f64) {
        self.roll(t_s);
        self.on_today_s += dt_s;
    }

    pub fn used_today_s(&self) -> f64 {
        self.on_today_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Preferences::default().validate().is_ok());
        let p = Preferences {
            switch_windows: vec![
                TimeWindow { start_s: 0.0, end_s: 100.0 },
                TimeWindow { start_s: 50.0, end_s: 200.0 },
            ],
            ..Preferences::default()
        };
        assert_eq!(p.validate(), Err(PreferencesError::Overlap));
        let p = Preferences {
            switch_budget_s: -1.0,
            ..Preferences::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn budget_resets_daily() {
        let mut b = SwitchBudget::new(2.0);
        assert!(b.available(0.0, 1.0));
        b.record_on(0.0, 1.0);
        b.record_on(1.0, 1.0);
        assert!(!b.available(2.0, 1.0));
        assert!(b.available(86_400.0, 1.0));
    }
}
