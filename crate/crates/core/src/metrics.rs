//! Predefined neural metrics, user-defined (band, channels) metrics, and
//! baseline-anchored 0–1 remapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datatree::{DataTree, Path};
use crate::dsp::{self, BandSpec};
use crate::stats;
use crate::wire::ChannelLayout;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("channel {0} is not in the active layout")]
    UnknownChannel(String),
    #[error("band {0} was not computed")]
    UnknownBand(String),
    #[error("no builtin metric named {0}")]
    UnknownMetric(String),
    #[error("metric {0} lists no channels")]
    NoChannels(String),
    #[error("band tree has no row for channel {0}")]
    MissingRow(String),
    #[error("baseline needs at least {needed} samples per phase, got {got}")]
    InsufficientBaseline { needed: usize, got: usize },
    #[error("baseline anchors coincide ({0})")]
    DegenerateBaseline(f64),
    #[error("non-finite baseline sample")]
    NonFinite,
    #[error("calibration samples: {0}")]
    BadSamples(String),
}

/// Sum of one band's power over a set of electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinition {
    pub name: String,
    pub band: BandSpec,
    pub channels: Vec<String>,
}

impl MetricDefinition {
    pub fn new(name: &str, band: BandSpec, channels: &[&str]) -> Self {
        MetricDefinition {
            name: name.to_string(),
            band,
            channels: channels.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn check(&self, layout: &ChannelLayout) -> Result<(), MetricError> {
        if self.channels.is_empty() {
            return Err(MetricError::NoChannels(self.name.clone()));
        }
        match self.channels.iter().find(|c| layout.index_of(c).is_none()) {
            Some(c) => Err(MetricError::UnknownChannel(c.clone())),
            None => Ok(()),
        }
    }
}

fn band(name: &str) -> BandSpec {
    dsp::default_bands()
        .into_iter()
        .find(|b| b.name == name)
        .expect("default band")
}

/// The six predefined indicators.
pub fn builtin_metrics() -> Vec<MetricDefinition> {
    vec![
        MetricDefinition::new("Attention", band("beta"), &["F3", "F4"]),
        MetricDefinition::new("Relaxation", band("alpha"), &["O1", "O2"]),
        MetricDefinition::new("IntentionToMove", band("alpha"), &["C3", "C4"]),
        MetricDefinition::new("Workload", band("theta"), &["F3", "F4"]),
        MetricDefinition::new("Navigation", band("theta"), &["O1", "O2"]),
        MetricDefinition::new("Creativity", band("alpha"), &["F3", "F4"]),
    ]
}

pub fn builtin_metric(name: &str) -> Result<MetricDefinition, MetricError> {
    builtin_metrics()
        .into_iter()
        .find(|m| m.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| MetricError::UnknownMetric(name.to_string()))
}

/// Evaluates `def` on a channels × bands tree whose columns follow `bands`.
/// Bands are matched by name.
pub fn eval_metric(
    def: &MetricDefinition,
    tree: &DataTree,
    bands: &[BandSpec],
    layout: &ChannelLayout,
) -> Result<f64, MetricError> {
    def.check(layout)?;
    let col = bands
        .iter()
        .position(|b| b.name == def.band.name)
        .ok_or_else(|| MetricError::UnknownBand(def.band.name.clone()))?;
    let mut sum = 0.0;
    for ch in &def.channels {
        let idx = layout.index_of(ch).expect("checked above");
        let row = tree
            .get_branch(&Path::single(idx as u32))
            .map_err(|_| MetricError::MissingRow(ch.clone()))?;
        sum += *row
            .get(col)
            .ok_or_else(|| MetricError::UnknownBand(def.band.name.clone()))?;
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStatistic {
    #[default]
    Mean,
    /// 10th/90th percentile, taken on the side facing away from the other phase.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub min_samples: usize,
    pub statistic: AnchorStatistic,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            min_samples: 8,
            statistic: AnchorStatistic::Mean,
        }
    }
}

/// Anchors of the 0 and 1 conditions for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub metric_name: String,
    pub low_anchor: f64,
    pub high_anchor: f64,
    pub n_low: usize,
    pub n_high: usize,
    /// Epoch ms of the newest calibration sample.
    pub captured_at: u64,
}

pub const DEGENERATE_EPS: f64 = 1e-12;

/// Low and high anchors from two recorded phases.
pub fn anchors(
    low: &[f64],
    high: &[f64],
    opts: &CalibrationOptions,
) -> Result<(f64, f64), MetricError> {
    let got = low.len().min(high.len());
    if got < opts.min_samples.max(1) {
        return Err(MetricError::InsufficientBaseline {
            needed: opts.min_samples.max(1),
            got,
        });
    }
    if low.iter().chain(high).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let (lo, hi) = match opts.statistic {
        AnchorStatistic::Mean => (stats::mean(low), stats::mean(high)),
        AnchorStatistic::Percentile => {
            if stats::mean(high) >= stats::mean(low) {
                (stats::percentile(low, 10.0), stats::percentile(high, 90.0))
            } else {
                (stats::percentile(low, 90.0), stats::percentile(high, 10.0))
            }
        }
    };
    if (hi - lo).abs() <= DEGENERATE_EPS {
        return Err(MetricError::DegenerateBaseline(lo));
    }
    Ok((lo, hi))
}

/// Baseline from the low ("0") and high ("1") phase samples of one metric.
pub fn calibrate(
    metric_name: &str,
    low: &[f64],
    high: &[f64],
    captured_at: u64,
    opts: &CalibrationOptions,
) -> Result<Baseline, MetricError> {
    let (low_anchor, high_anchor) = anchors(low, high, opts)?;
    Ok(Baseline {
        metric_name: metric_name.to_string(),
        low_anchor,
        high_anchor,
        n_low: low.len(),
        n_high: high.len(),
        captured_at,
    })
}

impl Baseline {
    /// Canonical on-disk form; identical samples always give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("baseline serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Linear map sending `low_anchor` to 0 and `high_anchor` to 1.
pub fn remap(value: f64, b: &Baseline, clamp: bool) -> f64 {
    remap_anchors(value, b.low_anchor, b.high_anchor, clamp)
}

pub fn remap_anchors(value: f64, low: f64, high: f64, clamp: bool) -> f64 {
    let r = (value - low) / (high - low);
    if clamp {
        r.clamp(0.0, 1.0)
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReading {
    pub name: String,
    pub raw: f64,
    pub remapped: f64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Low,
    High,
}

/// Metric values recorded during the two calibration phases, with their data timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSamples {
    pub low: Vec<(u64, f64)>,
    pub high: Vec<(u64, f64)>,
}

impl CalibrationSamples {
    pub fn push(&mut self, phase: Phase, ts_ms: u64, value: f64) {
        match phase {
            Phase::Low => self.low.push((ts_ms, value)),
            Phase::High => self.high.push((ts_ms, value)),
        }
    }

    pub fn baseline(&self, metric_name: &str, opts: &CalibrationOptions) -> Result<Baseline, MetricError> {
        let low: Vec<f64> = self.low.iter().map(|s| s.1).collect();
        let high: Vec<f64> = self.high.iter().map(|s| s.1).collect();
        let newest = self.low.iter().chain(&self.high).map(|s| s.0).max().unwrap_or(0);
        calibrate(metric_name, &low, &high, newest, opts)
    }

    /// `phase,timestamp_ms,value` rows, low phase first; values round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,timestamp_ms,value\n");
        for (name, rows) in [("low", &self.low), ("high", &self.high)] {
            for (ts, v) in rows {
                out.push_str(&format!("{name},{ts},{v:?}\n"));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("phase,timestamp_ms,value") {
            return Err(MetricError::BadSamples("expected header phase,timestamp_ms,value".into()));
        }
        let mut s = CalibrationSamples::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || MetricError::BadSamples(format!("line {}: {line:?}", i + 2));
            let mut cells = line.trim().split(',');
            let phase = match cells.next() {
                Some("low") => Phase::Low,
                Some("high") => Phase::High,
                _ => return Err(bad()),
            };
            let ts = cells.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
            let v = cells.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
            if cells.next().is_some() {
                return Err(bad());
            }
            s.push(phase, ts, v);
        }
        Ok(s)
    }
}
