//! Threshold trigger with hysteresis and debounce.
//!
//! A trigger fires when it is armed, its comparison holds strictly, and at least
//! `min_interval_s` has passed since the previous fire. Firing disarms it; it
//! re-arms once the value retreats to the other side of the threshold by
//! `rearm_band`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    /// Name of the metric feeding the trigger.
    pub source: String,
    pub comparator: Comparator,
    pub threshold: f64,
    #[serde(default = "default_rearm")]
    pub rearm_band: f64,
    #[serde(default = "default_interval")]
    pub min_interval_s: f64,
    pub event_name: String,
}

fn default_rearm() -> f64 {
    0.05
}

fn default_interval() -> f64 {
    10.0
}

impl TriggerSpec {
    pub fn new(source: &str, comparator: Comparator, threshold: f64, event_name: &str) -> Self {
        TriggerSpec {
            source: source.to_string(),
            comparator,
            threshold,
            rearm_band: default_rearm(),
            min_interval_s: default_interval(),
            event_name: event_name.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.threshold.is_finite() {
            return Err("threshold must be finite".into());
        }
        if !(self.rearm_band >= 0.0) || !(self.min_interval_s >= 0.0) {
            return Err("rearm_band and min_interval_s must be >= 0".into());
        }
        if self.event_name.is_empty() {
            return Err("event_name must not be empty".into());
        }
        Ok(())
    }

    fn satisfied(&self, value: f64) -> bool {
        match self.comparator {
            Comparator::Below => value < self.threshold,
            Comparator::Above => value > self.threshold,
        }
    }

    fn rearms(&self, value: f64) -> bool {
        match self.comparator {
            Comparator::Below => value >= self.threshold + self.rearm_band,
            Comparator::Above => value <= self.threshold - self.rearm_band,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerState {
    pub armed: bool,
    /// Seconds on the caller's clock.
    pub last_fired_at: Option<f64>,
}

impl Default for TriggerState {
    fn default() -> Self {
        TriggerState {
            armed: true,
            last_fired_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub event_name: String,
    pub source: String,
    pub value: f64,
    pub threshold: f64,
    pub at_s: f64,
}

pub fn trigger_eval(
    spec: &TriggerSpec,
    state: TriggerState,
    value: f64,
    now_s: f64,
) -> (TriggerState, Option<TriggerEvent>) {
    let mut next = state;
    if !next.armed && spec.rearms(value) {
        next.armed = true;
    }
    let debounced = next
        .last_fired_at
        .is_some_and(|t| now_s - t < spec.min_interval_s);
    if next.armed && spec.satisfied(value) && !debounced {
        next.armed = false;
        next.last_fired_at = Some(now_s);
        let ev = TriggerEvent {
            event_name: spec.event_name.clone(),
            source: spec.source.clone(),
            value,
            threshold: spec.threshold,
            at_s: now_s,
        };
        return (next, Some(ev));
    }
    (next, None)
}
