//! The engine thread and the state it shares with request handlers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use neuron_core::engine::{Engine, EngineOptions, LoggedEvent, MonotonicClock, NodeControl, Registry};
use neuron_core::metrics::{Baseline, CalibrationSamples, Phase};
use neuron_core::{EngineError, GraphSpec, TickReport, TriggerEvent};
use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

/// Messages buffered per WebSocket client before it is considered too slow.
pub const CLIENT_QUEUE: usize = 256;

/// How often node statuses are refreshed while running, in ticks.
const STATUS_EVERY: u64 = 25;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("no graph is loaded")]
    NoGraph,
    #[error("the engine is running; stop it first")]
    Running,
    #[error("the engine is already running")]
    AlreadyRunning,
    #[error("no node named {0}")]
    UnknownNode(String),
    #[error("node {0} is not a trigger")]
    NotTrigger(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("engine thread has stopped")]
    Gone,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub id: u64,
    pub tick_index: u64,
    pub node: String,
    #[serde(flatten)]
    pub event: TriggerEvent,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    /// Id of the metric node whose readings are sampled.
    pub metric: String,
    pub phase: Phase,
    pub samples: CalibrationSamples,
}

impl Calibration {
    pub fn to_json(&self) -> Json {
        json!({
            "metric": self.metric,
            "phase": self.phase,
            "samples": { "low": self.samples.low.len(), "high": self.samples.high.len() },
        })
    }

    /// Status shape when no session is active.
    pub fn idle_json() -> Json {
        json!({ "metric": null, "phase": "idle", "samples": { "low": 0, "high": 0 } })
    }
}

#[derive(Debug, Default)]
pub struct State {
    pub graph_id: Option<String>,
    pub graph: Option<GraphSpec>,
    loads: u64,
    pub running: bool,
    pub ticks_run: u64,
    pub ticks_skipped: u64,
    pub drop_count: u64,
    pub events: Vec<EventRecord>,
    pub calibration: Option<Calibration>,
    pub thresholds: BTreeMap<String, f64>,
    pub nodes: BTreeMap<String, Json>,
    pub last_errors: BTreeMap<String, String>,
}

impl State {
    pub fn status_json(&self) -> Json {
        json!({
            "running": self.running,
            "graph": self.graph_id,
            "tick_ms": self.graph.as_ref().map(|g| g.tick_ms),
            "ticks_run": self.ticks_run,
            "ticks_skipped": self.ticks_skipped,
            "drop_count": self.drop_count,
            "events": self.events.len(),
            "calibration": self.calibration.as_ref().map_or_else(Calibration::idle_json, Calibration::to_json),
            "thresholds": self.thresholds,
            "nodes": self.nodes,
            "errors": self.last_errors,
        })
    }

    /// Ids of metric nodes in the loaded graph.
    pub fn metric_nodes(&self) -> Vec<String> {
        self.graph
            .iter()
            .flat_map(|g| g.nodes.iter())
            .filter(|n| n.kind == "metric")
            .map(|n| n.id.clone())
            .collect()
    }

    /// Remap nodes fed directly by `metric`.
    pub fn remaps_of(&self, metric: &str) -> Vec<String> {
        self.graph
            .iter()
            .flat_map(|g| g.nodes.iter())
            .filter(|n| n.kind == "remap" && n.input_refs().any(|(_, r)| r.node == metric))
            .map(|n| n.id.clone())
            .collect()
    }
}

type Reply<T> = oneshot::Sender<Result<T, CommandError>>;

pub(crate) enum Command {
    Load(GraphSpec, Reply<String>),
    Start(Reply<()>),
    Stop(Reply<()>),
    Threshold(String, f64, Reply<()>),
    Baseline(Vec<String>, Baseline, Reply<()>),
    Shutdown,
}

/// Owns the engine thread. Every engine mutation goes through its command queue
/// and is applied between ticks.
pub struct EngineHost {
    pub(crate) commands: Mutex<Sender<Command>>,
    pub state: Arc<Mutex<State>>,
    pub(crate) feed: broadcast::Sender<String>,
    pub out_dir: PathBuf,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl EngineHost {
    pub fn spawn(out_dir: PathBuf, env: BTreeMap<String, String>, registry: Registry) -> Arc<Self> {
        let (tx, rx) = mpsc::channel();
        let (feed, _) = broadcast::channel(CLIENT_QUEUE);
        let state = Arc::new(Mutex::new(State::default()));
        let worker = Worker {
            rx,
            ctx: Ctx {
                state: state.clone(),
                feed: feed.clone(),
            },
            opts: EngineOptions {
                out_dir: out_dir.clone(),
                env,
                ..EngineOptions::default()
            },
            registry,
            engine: None,
        };
        let thread = std::thread::Builder::new()
            .name("neuron-engine".into())
            .spawn(move || worker.serve())
            .expect("spawn engine thread");
        Arc::new(EngineHost {
            commands: Mutex::new(tx),
            state,
            feed,
            out_dir,
            thread: Mutex::new(Some(thread)),
        })
    }

    pub fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.feed.subscribe()
    }

    pub(crate) fn publish(&self, msg: Json) {
        let _ = self.feed.send(msg.to_string());
    }

    async fn ask<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, CommandError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .lock()
            .unwrap()
            .send(make(tx))
            .map_err(|_| CommandError::Gone)?;
        rx.await.map_err(|_| CommandError::Gone)?
    }

    fn ask_blocking<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, CommandError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .lock()
            .unwrap()
            .send(make(tx))
            .map_err(|_| CommandError::Gone)?;
        rx.blocking_recv().map_err(|_| CommandError::Gone)?
    }

    /// Load from outside any async runtime.
    pub fn load_blocking(&self, g: GraphSpec) -> Result<String, CommandError> {
        self.ask_blocking(|r| Command::Load(g, r))
    }

    pub fn start_blocking(&self) -> Result<(), CommandError> {
        self.ask_blocking(Command::Start)
    }

    pub async fn load(&self, g: GraphSpec) -> Result<String, CommandError> {
        self.ask(|r| Command::Load(g, r)).await
    }

    pub async fn start(&self) -> Result<(), CommandError> {
        self.ask(Command::Start).await
    }

    pub async fn stop(&self) -> Result<(), CommandError> {
        self.ask(Command::Stop).await
    }

    pub async fn set_threshold(&self, node: String, value: f64) -> Result<(), CommandError> {
        self.ask(|r| Command::Threshold(node, value, r)).await
    }

    pub async fn apply_baseline(&self, nodes: Vec<String>, b: Baseline) -> Result<(), CommandError> {
        self.ask(|r| Command::Baseline(nodes, b, r)).await
    }

    /// Stops the engine and joins its thread.
    pub fn shutdown(&self) {
        let _ = self.commands.lock().unwrap().send(Command::Shutdown);
        if let Some(t) = self.thread.lock().unwrap().take() {
            let _ = t.join();
        }
    }
}

impl Drop for EngineHost {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Worker {
    rx: Receiver<Command>,
    ctx: Ctx,
    opts: EngineOptions,
    registry: Registry,
    engine: Option<Engine>,
}

struct Ctx {
    state: Arc<Mutex<State>>,
    feed: broadcast::Sender<String>,
}

enum Flow {
    Continue,
    Stop,
    Exit,
}

impl Ctx {
    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, msg: Json) {
        let _ = self.feed.send(msg.to_string());
    }

    /// Applies anything but Load and Start, which the worker handles itself.
    fn apply(&self, engine: Option<&mut Engine>, cmd: Command, running: bool) -> Flow {
        match cmd {
            Command::Load(_, reply) => {
                let _ = reply.send(Err(CommandError::Running));
            }
            Command::Start(reply) => {
                let _ = reply.send(Err(CommandError::AlreadyRunning));
            }
            Command::Stop(reply) => {
                let _ = reply.send(Ok(()));
                if running {
                    return Flow::Stop;
                }
            }
            Command::Threshold(node, value, reply) => {
                let r = engine
                    .ok_or(CommandError::NoGraph)
                    .and_then(|e| set_threshold(e, &node, value));
                if r.is_ok() {
                    self.state().thresholds.insert(node.clone(), value);
                    self.publish(json!({ "type": "threshold", "node": node, "value": value }));
                }
                let _ = reply.send(r);
            }
            Command::Baseline(nodes, b, reply) => {
                let r = match engine {
                    None => Err(CommandError::NoGraph),
                    Some(e) => nodes
                        .iter()
                        .try_for_each(|n| e.control(n, &NodeControl::SetBaseline(b.clone())))
                        .map_err(CommandError::from),
                };
                let _ = reply.send(r);
            }
            Command::Shutdown => return Flow::Exit,
        }
        Flow::Continue
    }

    fn record(&self, engine: &Engine, report: &TickReport) {
        let mut msgs = vec![json!({
            "type": "tick",
            "tick_index": report.tick_index,
            "skipped": report.skipped,
            "durations_us": report.durations_us,
            "drop_count": report.drop_count,
            "errors": report.errors,
        })];
        {
            let mut st = self.state();
            if report.skipped {
                st.ticks_skipped += 1;
            } else {
                st.ticks_run += 1;
            }
            st.drop_count = report.drop_count;
            if !report.errors.is_empty() {
                st.last_errors = report.errors.clone();
            }
            if !report.readings.is_empty() || !report.published.is_empty() {
                msgs.push(json!({
                    "type": "reading",
                    "tick_index": report.tick_index,
                    "data_ts_ms": report.data_ts_ms,
                    "values": report.readings,
                    "published": report.published,
                }));
            }
            for LoggedEvent { tick_index, node, event } in &report.events {
                let rec = EventRecord {
                    id: st.events.len() as u64 + 1,
                    tick_index: *tick_index,
                    node: node.clone(),
                    event: event.clone(),
                };
                let mut m = serde_json::to_value(&rec).expect("event serializes");
                m["type"] = "event".into();
                msgs.push(m);
                st.events.push(rec);
            }
            if let Some(cal) = &mut st.calibration {
                if let Some(v) = report.readings.get(&cal.metric) {
                    let ts = report.data_ts_ms.unwrap_or(report.started_at_us / 1000);
                    cal.samples.push(cal.phase, ts, *v);
                    let mut m = cal.to_json();
                    m["type"] = "calibration".into();
                    msgs.push(m);
                }
            }
            if report.tick_index.is_multiple_of(STATUS_EVERY) {
                st.nodes = engine.statuses();
            }
        }
        for m in msgs {
            self.publish(m);
        }
    }
}

fn set_threshold(e: &mut Engine, node: &str, value: f64) -> Result<(), CommandError> {
    if !e.order().contains(&node) {
        return Err(CommandError::UnknownNode(node.to_string()));
    }
    if !e.nodes_of_kind("trigger").contains(&node) {
        return Err(CommandError::NotTrigger(node.to_string()));
    }
    e.control(node, &NodeControl::SetThreshold(value))?;
    Ok(())
}

impl Worker {
    fn serve(mut self) {
        while let Ok(cmd) = self.rx.recv() {
            let flow = match cmd {
                Command::Load(g, reply) => {
                    let _ = reply.send(self.load(g));
                    Flow::Continue
                }
                Command::Start(reply) => match self.engine.take() {
                    None => {
                        let _ = reply.send(Err(CommandError::NoGraph));
                        Flow::Continue
                    }
                    Some(mut engine) => {
                        self.ctx.state().running = true;
                        let _ = reply.send(Ok(()));
                        let flow = self.run(&mut engine);
                        self.engine = Some(engine);
                        flow
                    }
                },
                other => self.ctx.apply(self.engine.as_mut(), other, false),
            };
            if let Flow::Exit = flow {
                return;
            }
        }
    }

    fn load(&mut self, g: GraphSpec) -> Result<String, CommandError> {
        self.engine = None;
        match Engine::new(g.clone(), &self.registry, self.opts.clone()) {
            Ok(e) => {
                let nodes = e.statuses();
                self.engine = Some(e);
                let id = {
                    let mut st = self.ctx.state();
                    st.loads += 1;
                    let id = format!("g{}", st.loads);
                    st.graph_id = Some(id.clone());
                    st.graph = Some(g);
                    st.nodes = nodes;
                    st.thresholds.clear();
                    st.calibration = None;
                    st.last_errors.clear();
                    id
                };
                self.ctx.publish(json!({ "type": "graph", "graph": id }));
                Ok(id)
            }
            Err(e) => {
                let mut st = self.ctx.state();
                st.graph = None;
                st.graph_id = None;
                st.nodes.clear();
                Err(e.into())
            }
        }
    }

    fn run(&mut self, engine: &mut Engine) -> Flow {
        self.ctx.publish(json!({ "type": "status", "running": true }));
        let stop = AtomicBool::new(false);
        let mut exit = false;
        let clock = MonotonicClock::new();
        let (rx, ctx) = (&self.rx, &self.ctx);
        engine.run(&clock, &stop, &mut |eng, report| {
            loop {
                let cmd = match rx.try_recv() {
                    Ok(cmd) => cmd,
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => {
                        exit = true;
                        break;
                    }
                };
                match ctx.apply(Some(eng), cmd, true) {
                    Flow::Continue => {}
                    Flow::Stop => stop.store(true, Ordering::Relaxed),
                    Flow::Exit => exit = true,
                }
            }
            if exit {
                stop.store(true, Ordering::Relaxed);
            }
            ctx.record(eng, report);
            !stop.load(Ordering::Relaxed)
        });
        let errors = engine.finish();
        for (node, err) in &errors {
            log::warn!("node {node} did not finish cleanly: {err}");
        }
        {
            let nodes = engine.statuses();
            let mut st = self.ctx.state();
            st.running = false;
            st.nodes = nodes;
            if !errors.is_empty() {
                st.last_errors = errors;
            }
        }
        self.ctx.publish(json!({ "type": "status", "running": false }));
        if exit {
            Flow::Exit
        } else {
            Flow::Continue
        }
    }
}
