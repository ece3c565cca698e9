//! Headless brain–computer-interface dataflow engine.
//!
//! EEG packets arrive over UDP (or from the built-in synthesizer), are reduced
//! to per-channel band powers, turned into metrics or model predictions, and
//! pushed to CSV files, webhooks, plots and live streams by a timer-driven
//! flow graph.

pub mod datatree;
pub mod dsp;
pub mod engine;
pub mod learn;
pub mod metrics;
pub mod sinks;
pub mod stats;
pub mod wire;

pub use datatree::{DataTree, DataTreeError, Path};
pub use dsp::{BandSpec, DspError, Spectrum};
pub use engine::{
    Engine, EngineError, GraphError, GraphSpec, NodeSpec, TickReport, Value,
};
pub use learn::{Dataset, LearnError, ModelKind, ModelSpec, TrainedModel, ValidationReport};
pub use metrics::{Baseline, MetricDefinition, MetricError, MetricReading};
pub use sinks::trigger::{Comparator, TriggerEvent, TriggerSpec, TriggerState};
pub use wire::{ChannelLayout, PacketKind, WireError, WirePacket};
