//! Timer-driven flow-graph runtime.
//!
//! A [`GraphSpec`] lists typed nodes and the edges between their ports. The
//! [`Engine`] runs the whole graph once per tick in topological order on a
//! single thread. A tick boundary that passes while the previous tick is still
//! running is skipped and counted, never queued. A node that fails keeps its
//! last output, so downstream nodes see the held value rather than nothing.

mod bench;
mod graph;
pub mod nodes;
mod runtime;

pub use bench::{bench_node, BenchResult, MIN_BENCH_REPS};
pub use graph::{load_graph, load_graph_with, topo_order, GraphError, GraphSpec, InputRef, NodeSpec};
pub use nodes::{BuildContext, KindInfo, Node, NodeControl, NodeCtx, NodeError, PortSpec, Registry};
pub use runtime::{
    Clock, Engine, EngineError, EngineOptions, ExecInterval, LoggedEvent, MonotonicClock, Published,
    RunSummary, SimClock, TickReport,
};

use serde::{Deserialize, Serialize};

use crate::datatree::DataTree;
use crate::sinks::trigger::TriggerEvent;
use crate::wire::WirePacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Packet,
    Tree,
    Scalar,
    Event,
}

impl std::fmt::Display for ValueKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ValueKind::Packet => "packet",
            ValueKind::Tree => "tree",
            ValueKind::Scalar => "scalar",
            ValueKind::Event => "event",
        })
    }
}

/// Payload carried along an edge.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Packet(WirePacket),
    Tree(DataTree),
    Scalar(f64),
    Event(TriggerEvent),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Packet(_) => ValueKind::Packet,
            Value::Tree(_) => ValueKind::Tree,
            Value::Scalar(_) => ValueKind::Scalar,
            Value::Event(_) => ValueKind::Event,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}
