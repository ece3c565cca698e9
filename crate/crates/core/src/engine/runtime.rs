use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use super::graph::{topo_order, GraphError, GraphSpec};
use super::nodes::{BuildContext, Node, NodeControl, NodeCtx, NodeError, Registry};
use super::Value;
use crate::dsp;
use crate::sinks::trigger::TriggerEvent;
use crate::wire::ChannelLayout;

/// Longest single sleep, so a stop request is noticed promptly.
const SLEEP_CHUNK_US: u64 = 10_000;

pub trait Clock: Send + Sync {
    /// Microseconds since an arbitrary fixed origin.
    fn now_us(&self) -> u64;
    fn sleep_us(&self, us: u64);
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }

    fn sleep_us(&self, us: u64) {
        std::thread::sleep(Duration::from_micros(us));
    }
}

/// Manually driven clock. Sleeping advances it instantly.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance_us(&self, us: u64) {
        self.now.fetch_add(us, Ordering::SeqCst);
    }

    pub fn set_us(&self, us: u64) {
        self.now.store(us, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_us(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_us(&self, us: u64) {
        self.advance_us(us);
    }
}

/// Last value written to an output port.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub value: Value,
    pub ts_ms: Option<u64>,
    /// Tick that produced it.
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Published {
    pub node: String,
    pub label: String,
    pub value: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedEvent {
    pub tick_index: u64,
    pub node: String,
    pub event: TriggerEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExecInterval {
    pub tick_index: u64,
    pub node: usize,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickReport {
    pub tick_index: u64,
    pub started_at_us: u64,
    /// The boundary passed while an earlier tick was still running.
    pub skipped: bool,
    pub durations_us: BTreeMap<String, u64>,
    /// Total packets lost by all nodes so far.
    pub drop_count: u64,
    pub errors: BTreeMap<String, String>,
    pub events: Vec<LoggedEvent>,
    /// Scalars produced this tick, keyed by node id (`id.port` for ports other than `out`).
    pub readings: BTreeMap<String, f64>,
    /// Newest data timestamp among values produced this tick.
    pub data_ts_ms: Option<u64>,
    pub published: Vec<Published>,
}

impl TickReport {
    fn skipped(tick_index: u64, at_us: u64, drop_count: u64) -> Self {
        TickReport {
            tick_index,
            started_at_us: at_us,
            skipped: true,
            durations_us: BTreeMap::new(),
            drop_count,
            errors: BTreeMap::new(),
            events: Vec::new(),
            readings: BTreeMap::new(),
            data_ts_ms: None,
            published: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub ticks_run: u64,
    pub ticks_skipped: u64,
    pub node_errors: u64,
    pub events: u64,
    pub elapsed_us: u64,
    /// Ended by the stop flag or the tick callback rather than `run_seconds`.
    pub interrupted: bool,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node}: {source}")]
    Build { node: String, source: NodeError },
    #[error("no node named {0}")]
    UnknownNode(String),
    #[error("node {node}: {source}")]
    Control { node: String, source: NodeError },
    #[error("channel layout: {0}")]
    Layout(String),
    #[error("telemetry: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub out_dir: PathBuf,
    pub env: BTreeMap<String, String>,
    /// JSON-lines file receiving one record per tick.
    pub telemetry: Option<PathBuf>,
    pub record_intervals: bool,
}

struct Edge {
    port: String,
    upstream: usize,
    output: usize,
}

struct NodeEntry {
    id: String,
    kind: String,
    node: Box<dyn Node>,
    inputs: Vec<Edge>,
    output_names: Vec<String>,
}

pub struct Engine {
    spec: GraphSpec,
    entries: Vec<NodeEntry>,
    outputs: Vec<Vec<Option<Slot>>>,
    next_tick: u64,
    event_log: Vec<LoggedEvent>,
    intervals: Vec<ExecInterval>,
    record_intervals: bool,
    telemetry: Option<BufWriter<File>>,
    finished: bool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("order", &self.order())
            .field("next_tick", &self.next_tick)
            .finish()
    }
}

impl Engine {
    pub fn new(spec: GraphSpec, registry: &Registry, opts: EngineOptions) -> Result<Self, EngineError> {
        registry.check(&spec)?;
        let order = topo_order(&spec)?;
        let layout = match &spec.channels {
            Some(names) => ChannelLayout::new(names.clone()).map_err(|e| EngineError::Layout(e.to_string()))?,
            None => ChannelLayout::default(),
        };
        let ctx = BuildContext {
            out_dir: opts.out_dir.clone(),
            env: opts.env.clone(),
            bands: spec.bands.clone().unwrap_or_else(dsp::default_bands),
            layout,
            tick_ms: spec.tick_ms,
        };
        let position: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut entries = Vec::with_capacity(order.len());
        for id in &order {
            let ns = spec.node(id).expect("ordered ids come from the spec");
            let info = registry.info(&ns.kind).expect("checked above");
            let node = registry.build(ns, &ctx).map_err(|source| EngineError::Build {
                node: id.clone(),
                source,
            })?;
            let inputs = ns
                .input_refs()
                .map(|(port, r)| {
                    let upstream = position[r.node.as_str()];
                    let up_info = registry.info(&spec.node(&r.node).unwrap().kind).unwrap();
                    Edge {
                        port: port.to_string(),
                        upstream,
                        output: up_info.output_index(&r.port).unwrap(),
                    }
                })
                .collect();
            entries.push(NodeEntry {
                id: id.clone(),
                kind: ns.kind.clone(),
                node,
                inputs,
                output_names: info.outputs.iter().map(|(n, _)| n.clone()).collect(),
            });
        }
        let outputs = entries.iter().map(|e| vec![None; e.output_names.len()]).collect();
        let telemetry = match &opts.telemetry {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                Some(BufWriter::new(File::create(p)?))
            }
            None => None,
        };
        Ok(Engine {
            spec,
            entries,
            outputs,
            next_tick: 0,
            event_log: Vec::new(),
            intervals: Vec::new(),
            record_intervals: opts.record_intervals,
            telemetry,
            finished: false,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    /// Node ids in execution order.
    pub fn order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn tick_ms(&self) -> u64 {
        self.spec.tick_ms
    }

    pub fn event_log(&self) -> &[LoggedEvent] {
        &self.event_log
    }

    /// Per-node execution windows, when recording was enabled. `node` indexes [`Engine::order`].
    pub fn intervals(&self) -> &[ExecInterval] {
        &self.intervals
    }

    fn index(&self, id: &str) -> Result<usize, EngineError> {
        self.entries
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| EngineError::UnknownNode(id.to_string()))
    }

    pub fn latest(&self, node: &str, port: &str) -> Option<&Value> {
        let i = self.index(node).ok()?;
        let j = self.entries[i].output_names.iter().position(|n| n == port)?;
        self.outputs[i][j].as_ref().map(|s| &s.value)
    }

    pub fn control(&mut self, node: &str, cmd: &NodeControl) -> Result<(), EngineError> {
        let i = self.index(node)?;
        self.entries[i].node.control(cmd).map_err(|source| EngineError::Control {
            node: node.to_string(),
            source,
        })
    }

    pub fn nodes_of_kind(&self, kind: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.id.as_str())
            .collect()
    }

    pub fn node_status(&self, node: &str) -> Option<Json> {
        let i = self.index(node).ok()?;
        self.entries[i].node.status()
    }

    pub fn statuses(&self) -> BTreeMap<String, Json> {
        self.entries
            .iter()
            .map(|e| {
                let mut s = serde_json::json!({ "kind": e.kind });
                if let Some(extra) = e.node.status() {
                    s["status"] = extra;
                }
                (e.id.clone(), s)
            })
            .collect()
    }

    pub fn drop_count(&self) -> u64 {
        self.entries.iter().map(|e| e.node.dropped()).sum()
    }

    /// Run the next tick immediately, ignoring the schedule.
    pub fn tick_once(&mut self, clock: &dyn Clock) -> TickReport {
        let k = self.next_tick;
        self.next_tick += 1;
        let report = self.execute_tick(k, clock);
        self.log(&report);
        report
    }

    fn execute_tick(&mut self, k: u64, clock: &dyn Clock) -> TickReport {
        let mut report = TickReport::skipped(k, clock.now_us(), 0);
        report.skipped = false;
        for i in 0..self.entries.len() {
            let (done, rest) = self.outputs.split_at_mut(i);
            let own = &mut rest[0];
            let entry = &mut self.entries[i];
            let slots: Vec<(&str, Option<&Slot>)> = entry
                .inputs
                .iter()
                .map(|e| (e.port.as_str(), done[e.upstream][e.output].as_ref()))
                .collect();
            let fresh = slots.iter().any(|(_, s)| s.is_some_and(|s| s.tick == k));
            if !(slots.is_empty() || fresh || entry.node.always_run()) {
                continue;
            }
            let start = clock.now_us();
            let mut ctx = NodeCtx::new(&entry.id, k, start, clock, slots);
            let result = entry.node.execute(&mut ctx);
            let end = clock.now_us();
            let NodeCtx { emitted, published, .. } = ctx;
            report.durations_us.insert(entry.id.clone(), end - start);
            if self.record_intervals {
                self.intervals.push(ExecInterval {
                    tick_index: k,
                    node: i,
                    start_us: start,
                    end_us: end,
                });
            }
            if let Err(e) = result {
                log::debug!("node {} failed on tick {k}: {e}", entry.id);
                report.errors.insert(entry.id.clone(), e.0);
                continue;
            }
            report.published.extend(published);
            for (port, value, ts_ms) in emitted {
                let Some(j) = entry.output_names.iter().position(|n| *n == port) else {
                    report
                        .errors
                        .insert(entry.id.clone(), format!("emitted on undeclared port {port:?}"));
                    continue;
                };
                match &value {
                    Value::Scalar(v) => {
                        let key = if port == "out" {
                            entry.id.clone()
                        } else {
                            format!("{}.{port}", entry.id)
                        };
                        report.readings.insert(key, *v);
                    }
                    Value::Event(e) => report.events.push(LoggedEvent {
                        tick_index: k,
                        node: entry.id.clone(),
                        event: e.clone(),
                    }),
                    _ => {}
                }
                report.data_ts_ms = report.data_ts_ms.max(ts_ms);
                own[j] = Some(Slot { value, ts_ms, tick: k });
            }
        }
        report.drop_count = self.drop_count();
        self.event_log.extend(report.events.iter().cloned());
        report
    }

    fn log(&mut self, report: &TickReport) {
        if let Some(w) = &mut self.telemetry {
            let line = serde_json::to_string(report).expect("reports serialize");
            if let Err(e) = writeln!(w, "{line}") {
                log::warn!("telemetry write failed: {e}");
                self.telemetry = None;
            }
        }
    }

    /// Run on the tick schedule until `run_seconds` elapses, `stop` is set, or
    /// `on_tick` returns false. Boundaries missed by a slow tick are reported as skipped.
    pub fn run(
        &mut self,
        clock: &dyn Clock,
        stop: &AtomicBool,
        on_tick: &mut dyn FnMut(&mut Engine, &TickReport) -> bool,
    ) -> RunSummary {
        let tick_us = self.spec.tick_ms * 1000;
        let limit = self
            .spec
            .run_seconds
            .map(|s| ((s.max(0.0) * 1e6) / tick_us as f64).floor() as u64);
        self.finished = false;
        let start = clock.now_us();
        let mut summary = RunSummary::default();
        let mut k = 0u64;
        let mut interrupted = false;
        'outer: while limit.is_none_or(|m| k < m) {
            let target = start + k * tick_us;
            loop {
                if stop.load(Ordering::Relaxed) {
                    interrupted = true;
                    break 'outer;
                }
                let now = clock.now_us();
                if now >= target {
                    break;
                }
                clock.sleep_us((target - now).min(SLEEP_CHUNK_US));
            }
            let report = self.execute_tick(self.next_tick + k, clock);
            self.log(&report);
            summary.ticks_run += 1;
            summary.node_errors += report.errors.len() as u64;
            summary.events += report.events.len() as u64;
            let keep_going = on_tick(self, &report);
            k += 1;
            let elapsed = clock.now_us() - start;
            let mut next = elapsed.div_ceil(tick_us).max(k);
            if let Some(m) = limit {
                next = next.min(m);
            }
            for s in k..next {
                let r = TickReport::skipped(self.next_tick + s, start + s * tick_us, self.drop_count());
                self.log(&r);
                summary.ticks_skipped += 1;
                on_tick(self, &r);
            }
            k = next;
            if !keep_going {
                interrupted = true;
                break;
            }
        }
        self.next_tick += k;
        summary.elapsed_us = clock.now_us() - start;
        summary.interrupted = interrupted;
        summary
    }

    /// Flush sinks; returns the errors of nodes that failed to finish. Runs once per `run`.
    pub fn finish(&mut self) -> BTreeMap<String, String> {
        let mut errors = BTreeMap::new();
        if self.finished {
            return errors;
        }
        self.finished = true;
        for e in &mut self.entries {
            if let Err(err) = e.node.finish() {
                errors.insert(e.id.clone(), err.0);
            }
        }
        if let Some(w) = &mut self.telemetry {
            let _ = w.flush();
        }
        errors
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        for (node, err) in self.finish() {
            log::warn!("node {node} did not finish cleanly: {err}");
        }
    }
}
