//! Node kinds and the registry that builds them from a [`NodeSpec`].

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Display;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value as Json;
use thiserror::Error;

use super::graph::NodeSpec;
use super::runtime::{Clock, Published, Slot};
use super::{Value, ValueKind};
use crate::datatree::DataTree;
use crate::dsp::{self, BandSpec, Spectrum};
use crate::learn::TrainedModel;
use crate::metrics::{self, Baseline, MetricDefinition};
use crate::sinks::csv::{generic_column_names, layout_column_names, CsvAppender};
use crate::sinks::plot::{self, PlotKind, PlotSpec};
use crate::sinks::trigger::{trigger_eval, Comparator, TriggerEvent, TriggerSpec, TriggerState};
use crate::sinks::webhook::{self, WebhookConfig, WebhookDispatcher};
use crate::wire::{self, ChannelLayout, Latest, PacketKind, ReceiverHandle, UdpSender, WirePacket};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct NodeError(pub String);

impl NodeError {
    pub fn new(e: impl Display) -> Self {
        NodeError(e.to_string())
    }
}

/// Live adjustments applied between ticks.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeControl {
    SetThreshold(f64),
    SetBaseline(Baseline),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortSpec {
    pub name: String,
    pub accepts: Vec<ValueKind>,
    pub required: bool,
}

impl PortSpec {
    pub fn required(name: &str, accepts: &[ValueKind]) -> Self {
        PortSpec {
            name: name.to_string(),
            accepts: accepts.to_vec(),
            required: true,
        }
    }

    pub fn optional(name: &str, accepts: &[ValueKind]) -> Self {
        PortSpec {
            required: false,
            ..Self::required(name, accepts)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KindInfo {
    pub inputs: Vec<PortSpec>,
    /// Any port name is accepted when set, with these payload kinds.
    pub variadic: Option<Vec<ValueKind>>,
    pub outputs: Vec<(String, ValueKind)>,
    pub required_params: Vec<String>,
}

impl KindInfo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(mut self, p: PortSpec) -> Self {
        self.inputs.push(p);
        self
    }

    pub fn variadic(mut self, accepts: &[ValueKind]) -> Self {
        self.variadic = Some(accepts.to_vec());
        self
    }

    pub fn output(mut self, name: &str, kind: ValueKind) -> Self {
        self.outputs.push((name.to_string(), kind));
        self
    }

    pub fn requires(mut self, params: &[&str]) -> Self {
        self.required_params = params.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn output_kind(&self, port: &str) -> Option<ValueKind> {
        self.outputs.iter().find(|(n, _)| n == port).map(|(_, k)| *k)
    }

    pub(crate) fn output_index(&self, port: &str) -> Option<usize> {
        self.outputs.iter().position(|(n, _)| n == port)
    }

    pub fn accepts(&self, port: &str) -> Option<&[ValueKind]> {
        self.inputs
            .iter()
            .find(|p| p.name == port)
            .map(|p| p.accepts.as_slice())
            .or(self.variadic.as_deref())
    }
}

/// Shared settings every node factory sees.
#[derive(Debug, Clone)]
pub struct BuildContext {
    /// Root for relative sink paths.
    pub out_dir: PathBuf,
    pub env: BTreeMap<String, String>,
    pub bands: Vec<BandSpec>,
    pub layout: ChannelLayout,
    pub tick_ms: u64,
}

impl Default for BuildContext {
    fn default() -> Self {
        BuildContext {
            out_dir: PathBuf::from("."),
            env: BTreeMap::new(),
            bands: dsp::default_bands(),
            layout: ChannelLayout::default(),
            tick_ms: 40,
        }
    }
}

impl BuildContext {
    pub fn out_path(&self, p: &str) -> PathBuf {
        let p = FsPath::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }
}

/// One executing node. `execute` runs at most once per tick.
pub trait Node: Send {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError>;

    fn control(&mut self, cmd: &NodeControl) -> Result<(), NodeError> {
        let _ = cmd;
        Err(NodeError("node does not accept control commands".into()))
    }

    /// Run even when no input changed this tick.
    fn always_run(&self) -> bool {
        false
    }

    /// Input packets lost so far (superseded, out of order or unparsable).
    fn dropped(&self) -> u64 {
        0
    }

    fn status(&self) -> Option<Json> {
        None
    }

    /// Called once when the engine stops.
    fn finish(&mut self) -> Result<(), NodeError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Input<'a> {
    pub value: &'a Value,
    pub fresh: bool,
    pub ts_ms: Option<u64>,
}

pub struct NodeCtx<'a> {
    pub node_id: &'a str,
    pub tick_index: u64,
    pub now_us: u64,
    pub clock: &'a dyn Clock,
    inputs: Vec<(&'a str, Option<&'a Slot>)>,
    pub(crate) emitted: Vec<(String, Value, Option<u64>)>,
    pub(crate) published: Vec<Published>,
}

impl<'a> NodeCtx<'a> {
    pub(crate) fn new(
        node_id: &'a str,
        tick_index: u64,
        now_us: u64,
        clock: &'a dyn Clock,
        inputs: Vec<(&'a str, Option<&'a Slot>)>,
    ) -> Self {
        NodeCtx {
            node_id,
            tick_index,
            now_us,
            clock,
            inputs,
            emitted: Vec::new(),
            published: Vec::new(),
        }
    }

    fn view(&self, slot: &'a Slot) -> Input<'a> {
        Input {
            value: &slot.value,
            fresh: slot.tick == self.tick_index,
            ts_ms: slot.ts_ms,
        }
    }

    pub fn input(&self, port: &str) -> Option<Input<'a>> {
        self.inputs
            .iter()
            .find(|(p, _)| *p == port)
            .and_then(|(_, s)| s.map(|s| self.view(s)))
    }

    /// Connected inputs in port-name order; `None` until upstream has produced.
    pub fn inputs(&self) -> impl Iterator<Item = (&'a str, Option<Input<'a>>)> + '_ {
        self.inputs.iter().map(|(p, s)| (*p, s.map(|s| self.view(s))))
    }

    pub fn any_fresh(&self) -> bool {
        self.inputs().any(|(_, i)| i.is_some_and(|i| i.fresh))
    }

    /// Newest data timestamp among fresh inputs.
    pub fn data_ts(&self) -> Option<u64> {
        self.inputs()
            .filter_map(|(_, i)| i.filter(|i| i.fresh).and_then(|i| i.ts_ms))
            .max()
    }

    pub fn fresh_scalar(&self, port: &str) -> Option<f64> {
        self.input(port).filter(|i| i.fresh).and_then(|i| i.value.as_scalar())
    }

    pub fn emit(&mut self, port: &str, value: Value) {
        let ts = self.data_ts();
        self.emitted.push((port.to_string(), value, ts));
    }

    pub fn emit_at(&mut self, port: &str, value: Value, ts_ms: Option<u64>) {
        self.emitted.push((port.to_string(), value, ts_ms));
    }

    pub fn publish(&mut self, label: &str, value: Json) {
        self.published.push(Published {
            node: self.node_id.to_string(),
            label: label.to_string(),
            value,
        });
    }

    /// Seconds on the data clock if inputs carry timestamps, else the engine clock.
    pub fn now_s(&self) -> f64 {
        match self.data_ts() {
            Some(ts) => ts as f64 / 1e3,
            None => self.now_us as f64 / 1e6,
        }
    }
}

pub type Factory = Arc<dyn Fn(&NodeSpec, &BuildContext) -> Result<Box<dyn Node>, NodeError> + Send + Sync>;

#[derive(Clone, Default)]
pub struct Registry {
    kinds: BTreeMap<String, (KindInfo, Factory)>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.kinds.keys()).finish()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, kind: &str, info: KindInfo, factory: F)
    where
        F: Fn(&NodeSpec, &BuildContext) -> Result<Box<dyn Node>, NodeError> + Send + Sync + 'static,
    {
        self.kinds.insert(kind.to_string(), (info, Arc::new(factory)));
    }

    pub fn info(&self, kind: &str) -> Option<&KindInfo> {
        self.kinds.get(kind).map(|(i, _)| i)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &NodeSpec, ctx: &BuildContext) -> Result<Box<dyn Node>, NodeError> {
        let (_, f) = self
            .kinds
            .get(&spec.kind)
            .ok_or_else(|| NodeError(format!("unknown kind {:?}", spec.kind)))?;
        f(spec, ctx)
    }

    pub fn builtin() -> Self {
        use ValueKind::*;
        let mut r = Registry::empty();
        r.register(
            "udp_in",
            KindInfo::new().output("out", Packet),
            |s, _| Ok(Box::new(UdpIn::build(s)?)),
        );
        r.register(
            "band_power",
            KindInfo::new()
                .input(PortSpec::required("in", &[Packet]))
                .output("out", Tree),
            |s, c| Ok(Box::new(BandPowerNode::build(s, c)?)),
        );
        r.register(
            "metric",
            KindInfo::new()
                .input(PortSpec::required("in", &[Tree]))
                .output("out", Scalar),
            |s, c| Ok(Box::new(MetricNode::build(s, c)?)),
        );
        r.register(
            "remap",
            KindInfo::new()
                .input(PortSpec::required("in", &[Scalar]))
                .output("out", Scalar),
            |s, _| Ok(Box::new(RemapNode::build(s)?)),
        );
        r.register(
            "predict",
            KindInfo::new()
                .input(PortSpec::required("in", &[Tree]))
                .output("out", Scalar)
                .output("class", Scalar)
                .requires(&["model"]),
            |s, _| Ok(Box::new(PredictNode::build(s)?)),
        );
        r.register(
            "trigger",
            KindInfo::new()
                .input(PortSpec::required("in", &[Scalar]))
                .output("out", Event)
                .requires(&["comparator", "threshold", "event"]),
            |s, _| Ok(Box::new(TriggerNode::build(s)?)),
        );
        r.register(
            "csv_out",
            KindInfo::new().variadic(&[Tree, Scalar]).requires(&["path"]),
            |s, c| Ok(Box::new(CsvOut::build(s, c)?)),
        );
        r.register(
            "webhook_out",
            KindInfo::new().variadic(&[Event]),
            |s, c| Ok(Box::new(WebhookOut::build(s, c)?)),
        );
        r.register(
            "udp_out",
            KindInfo::new()
                .input(PortSpec::required("in", &[Packet, Tree]))
                .requires(&["target"]),
            |s, _| Ok(Box::new(UdpOut::build(s)?)),
        );
        r.register(
            "plot",
            KindInfo::new()
                .input(PortSpec::required("in", &[Scalar]))
                .input(PortSpec::optional("b", &[Scalar]))
                .requires(&["path"]),
            |s, c| Ok(Box::new(PlotNode::build(s, c)?)),
        );
        r.register(
            "ws_out",
            KindInfo::new().variadic(&[Scalar, Tree, Event]),
            |s, _| Ok(Box::new(WsOut::build(s)?)),
        );
        r.register(
            "const",
            KindInfo::new().output("out", Scalar).requires(&["value"]),
            |s, _| Ok(Box::new(ConstNode::build(s)?)),
        );
        r.register(
            "expr",
            KindInfo::new()
                .input(PortSpec::required("a", &[Scalar]))
                .input(PortSpec::optional("b", &[Scalar]))
                .output("out", Scalar)
                .requires(&["op"]),
            |s, _| Ok(Box::new(ExprNode::build(s)?)),
        );
        r
    }
}

/// Typed access to a node's `params` map.
pub struct Params<'a> {
    spec: &'a NodeSpec,
}

impl<'a> Params<'a> {
    pub fn of(spec: &'a NodeSpec) -> Self {
        Params { spec }
    }

    fn bad(&self, key: &str, why: &str) -> NodeError {
        NodeError(format!("parameter {key:?} {why}"))
    }

    pub fn raw(&self, key: &str) -> Option<&'a Json> {
        self.spec.params.get(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64, NodeError> {
        self.opt_f64(key)?.ok_or_else(|| self.bad(key, "is required"))
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, NodeError> {
        match self.raw(key) {
            None | Some(Json::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| self.bad(key, "must be a finite number")),
        }
    }

    pub fn str(&self, key: &str) -> Result<&'a str, NodeError> {
        self.opt_str(key)?.ok_or_else(|| self.bad(key, "is required"))
    }

    pub fn opt_str(&self, key: &str) -> Result<Option<&'a str>, NodeError> {
        match self.raw(key) {
            None | Some(Json::Null) => Ok(None),
            Some(Json::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.bad(key, "must be a string")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, NodeError> {
        match self.raw(key) {
            None | Some(Json::Null) => Ok(default),
            Some(Json::Bool(b)) => Ok(*b),
            Some(_) => Err(self.bad(key, "must be true or false")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, NodeError> {
        match self.raw(key) {
            None | Some(Json::Null) => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| self.bad(key, "must be a non-negative integer")),
        }
    }

    pub fn parse<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>, NodeError> {
        match self.raw(key) {
            None | Some(Json::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| self.bad(key, &e.to_string())),
        }
    }
}

fn bands_param(p: &Params<'_>, ctx: &BuildContext) -> Result<Vec<BandSpec>, NodeError> {
    Ok(p.parse::<Vec<BandSpec>>("bands")?.unwrap_or_else(|| ctx.bands.clone()))
}

enum Source {
    Socket(ReceiverHandle),
    Trace { packets: Vec<WirePacket>, next: usize, looped: bool },
    Datagrams { bytes: Vec<Vec<u8>>, next: usize },
}

/// UDP receiver, or replay of a recorded JSON-lines trace (one packet per tick).
pub struct UdpIn {
    source: Source,
    kind: Option<PacketKind>,
    received: u64,
    parse_errors: u64,
}

impl UdpIn {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let kind = match p.opt_str("kind")? {
            None | Some("any") => None,
            Some(k) => Some(PacketKind::from_wire(k).ok_or_else(|| NodeError(format!("unknown packet kind {k:?}")))?),
        };
        let source = if let Some(trace) = p.opt_str("trace")? {
            let file = std::fs::File::open(trace).map_err(|e| NodeError(format!("trace {trace}: {e}")))?;
            let mut packets = wire::read_trace(std::io::BufReader::new(file)).map_err(NodeError::new)?;
            if let Some(k) = kind {
                packets.retain(|pk| pk.kind == k);
            }
            Source::Trace {
                packets,
                next: 0,
                looped: p.bool_or("loop", false)?,
            }
        } else {
            let addr = match p.opt_str("bind")? {
                Some(a) => a.to_string(),
                None => format!("127.0.0.1:{}", p.u64_or("port", 12345)?),
            };
            Source::Socket(ReceiverHandle::spawn(addr.as_str(), kind).map_err(|e| NodeError(format!("bind {addr}: {e}")))?)
        };
        Ok(UdpIn {
            source,
            kind,
            received: 0,
            parse_errors: 0,
        })
    }

    /// Parses one queued datagram per execution; used to time packet decoding.
    pub fn from_datagrams(bytes: Vec<Vec<u8>>) -> Self {
        UdpIn {
            source: Source::Datagrams { bytes, next: 0 },
            kind: None,
            received: 0,
            parse_errors: 0,
        }
    }

    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        match &self.source {
            Source::Socket(h) => Some(h.local_addr()),
            _ => None,
        }
    }
}

impl Node for UdpIn {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let packet = match &mut self.source {
            Source::Socket(h) => match h.latest() {
                Latest::Fresh(p) => Some(p),
                Latest::Stale(_) | Latest::NoneYet => None,
            },
            Source::Trace { packets, next, looped } => {
                if *next >= packets.len() && *looped && !packets.is_empty() {
                    *next = 0;
                }
                let p = packets.get(*next).cloned();
                *next += 1;
                p
            }
            Source::Datagrams { bytes, next } => {
                if bytes.is_empty() {
                    None
                } else {
                    let b = &bytes[*next % bytes.len()];
                    *next += 1;
                    match wire::parse_packet(b) {
                        Ok(p) => Some(p),
                        Err(e) => {
                            self.parse_errors += 1;
                            return Err(NodeError::new(e));
                        }
                    }
                }
            }
        };
        if let Some(p) = packet {
            if self.kind.is_none_or(|k| k == p.kind) {
                self.received += 1;
                let ts = Some(p.timestamp_ms);
                ctx.emit_at("out", Value::Packet(p), ts);
            }
        }
        Ok(())
    }

    fn always_run(&self) -> bool {
        true
    }

    fn dropped(&self) -> u64 {
        match &self.source {
            Source::Socket(h) => h.stats().dropped(),
            _ => self.parse_errors,
        }
    }

    fn status(&self) -> Option<Json> {
        let mut s = serde_json::json!({ "received": self.received, "dropped": self.dropped() });
        if let Some(addr) = self.local_addr() {
            s["addr"] = addr.to_string().into();
        }
        Some(s)
    }
}

pub struct BandPowerNode {
    bands: Vec<BandSpec>,
    fs_hz: f64,
}

impl BandPowerNode {
    fn build(spec: &NodeSpec, ctx: &BuildContext) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let bands = bands_param(&p, ctx)?;
        if bands.is_empty() {
            return Err(NodeError("band list is empty".into()));
        }
        Ok(BandPowerNode {
            bands,
            fs_hz: p.opt_f64("fs_hz")?.unwrap_or(125.0),
        })
    }

    pub fn compute(&self, packet: &WirePacket) -> Result<DataTree, NodeError> {
        match packet.kind {
            PacketKind::FftFrame => {
                let spec = Spectrum::from_bins(self.fs_hz, packet.payload.clone()).map_err(NodeError::new)?;
                dsp::band_matrix(&spec, &self.bands).map_err(NodeError::new)
            }
            PacketKind::RawWindow => {
                let spec = dsp::fft_spectrum(&packet.payload, self.fs_hz).map_err(NodeError::new)?;
                dsp::band_matrix(&spec, &self.bands).map_err(NodeError::new)
            }
            PacketKind::BandPowerFrame => {
                if packet.width() != self.bands.len() {
                    return Err(NodeError(format!(
                        "band-power frame has {} columns, {} bands configured",
                        packet.width(),
                        self.bands.len()
                    )));
                }
                DataTree::from_matrix(&packet.payload).map_err(NodeError::new)
            }
        }
    }
}

impl Node for BandPowerNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let Some(Input { value: Value::Packet(p), fresh: true, .. }) = ctx.input("in") else {
            return Ok(());
        };
        let tree = self.compute(p)?;
        ctx.emit("out", Value::Tree(tree));
        Ok(())
    }
}

pub struct MetricNode {
    def: MetricDefinition,
    bands: Vec<BandSpec>,
    layout: ChannelLayout,
}

impl MetricNode {
    fn build(spec: &NodeSpec, ctx: &BuildContext) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let bands = bands_param(&p, ctx)?;
        let layout = match p.parse::<Vec<String>>("channels_layout")? {
            Some(names) => ChannelLayout::new(names).map_err(NodeError::new)?,
            None => ctx.layout.clone(),
        };
        let def = if let Some(name) = p.opt_str("metric")? {
            metrics::builtin_metric(name).map_err(NodeError::new)?
        } else {
            let band = match p.raw("band") {
                Some(Json::String(b)) => bands
                    .iter()
                    .find(|x| &x.name == b)
                    .cloned()
                    .ok_or_else(|| NodeError(format!("band {b:?} is not in the band list")))?,
                Some(_) => p.parse::<BandSpec>("band")?.unwrap(),
                None => return Err(NodeError("set either \"metric\" or \"band\" and \"channels\"".into())),
            };
            let channels: Vec<String> = p
                .parse("channels")?
                .ok_or_else(|| NodeError("parameter \"channels\" is required".into()))?;
            MetricDefinition {
                name: p.opt_str("name")?.unwrap_or(&spec.id).to_string(),
                band,
                channels,
            }
        };
        def.check(&layout).map_err(NodeError::new)?;
        Ok(MetricNode { def, bands, layout })
    }
}

impl Node for MetricNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let Some(Input { value: Value::Tree(t), fresh: true, .. }) = ctx.input("in") else {
            return Ok(());
        };
        let v = metrics::eval_metric(&self.def, t, &self.bands, &self.layout).map_err(NodeError::new)?;
        ctx.emit("out", Value::Scalar(v));
        Ok(())
    }

    fn status(&self) -> Option<Json> {
        Some(serde_json::json!({ "metric": self.def.name }))
    }
}

pub struct RemapNode {
    low: f64,
    high: f64,
    clamp: bool,
}

impl RemapNode {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let (low, high) = if let Some(path) = p.opt_str("baseline")? {
            let text = std::fs::read_to_string(path).map_err(|e| NodeError(format!("baseline {path}: {e}")))?;
            let b = Baseline::from_json(&text).map_err(NodeError::new)?;
            (b.low_anchor, b.high_anchor)
        } else {
            (p.f64("low")?, p.f64("high")?)
        };
        check_anchors(low, high)?;
        Ok(RemapNode {
            low,
            high,
            clamp: p.bool_or("clamp", true)?,
        })
    }
}

fn check_anchors(low: f64, high: f64) -> Result<(), NodeError> {
    if (high - low).abs() <= metrics::DEGENERATE_EPS {
        return Err(NodeError(format!("anchors {low} and {high} coincide")));
    }
    Ok(())
}

impl Node for RemapNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        if let Some(v) = ctx.fresh_scalar("in") {
            ctx.emit("out", Value::Scalar(metrics::remap_anchors(v, self.low, self.high, self.clamp)));
        }
        Ok(())
    }

    fn control(&mut self, cmd: &NodeControl) -> Result<(), NodeError> {
        match cmd {
            NodeControl::SetBaseline(b) => {
                check_anchors(b.low_anchor, b.high_anchor)?;
                self.low = b.low_anchor;
                self.high = b.high_anchor;
                Ok(())
            }
            NodeControl::SetThreshold(_) => Err(NodeError("remap nodes take baselines, not thresholds".into())),
        }
    }

    fn status(&self) -> Option<Json> {
        Some(serde_json::json!({ "low": self.low, "high": self.high, "clamp": self.clamp }))
    }
}

pub struct PredictNode {
    model: TrainedModel,
    threshold: Option<f64>,
}

impl PredictNode {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let path = p.str("model")?;
        let model = TrainedModel::load(path).map_err(|e| NodeError(format!("model {path}: {e}")))?;
        Ok(PredictNode {
            model,
            threshold: p.opt_f64("threshold")?,
        })
    }
}

impl Node for PredictNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let Some(Input { value: Value::Tree(t), fresh: true, .. }) = ctx.input("in") else {
            return Ok(());
        };
        let pred = self.model.predict(&t.flatten(), self.threshold).map_err(NodeError::new)?;
        ctx.emit("out", Value::Scalar(pred.score));
        if let Some(c) = pred.class {
            ctx.emit("class", Value::Scalar(c as f64));
        }
        Ok(())
    }

    fn control(&mut self, cmd: &NodeControl) -> Result<(), NodeError> {
        match cmd {
            NodeControl::SetThreshold(t) if t.is_finite() => {
                self.threshold = Some(*t);
                Ok(())
            }
            _ => Err(NodeError("predict nodes accept a finite threshold only".into())),
        }
    }
}

pub struct TriggerNode {
    spec: TriggerSpec,
    state: TriggerState,
}

impl TriggerNode {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let comparator: Comparator = p.parse("comparator")?.unwrap();
        let source = match p.opt_str("source")? {
            Some(s) => s.to_string(),
            None => spec
                .input_refs()
                .next()
                .map(|(_, r)| r.node)
                .unwrap_or_default(),
        };
        let mut t = TriggerSpec::new(&source, comparator, p.f64("threshold")?, p.str("event")?);
        if let Some(b) = p.opt_f64("rearm_band")? {
            t.rearm_band = b;
        }
        if let Some(m) = p.opt_f64("min_interval_s")? {
            t.min_interval_s = m;
        }
        t.validate().map_err(NodeError)?;
        Ok(TriggerNode {
            spec: t,
            state: TriggerState::default(),
        })
    }
}

impl Node for TriggerNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let Some(v) = ctx.fresh_scalar("in") else {
            return Ok(());
        };
        if !v.is_finite() {
            return Err(NodeError(format!("non-finite input {v}")));
        }
        let (state, event) = trigger_eval(&self.spec, self.state, v, ctx.now_s());
        self.state = state;
        if let Some(e) = event {
            ctx.emit("out", Value::Event(e));
        }
        Ok(())
    }

    fn control(&mut self, cmd: &NodeControl) -> Result<(), NodeError> {
        match cmd {
            NodeControl::SetThreshold(t) if t.is_finite() => {
                self.spec.threshold = *t;
                Ok(())
            }
            NodeControl::SetThreshold(t) => Err(NodeError(format!("threshold {t} is not finite"))),
            NodeControl::SetBaseline(_) => Err(NodeError("trigger nodes take thresholds, not baselines".into())),
        }
    }

    fn status(&self) -> Option<Json> {
        Some(serde_json::json!({
            "event": self.spec.event_name,
            "comparator": self.spec.comparator,
            "threshold": self.spec.threshold,
            "armed": self.state.armed,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColumnStyle {
    Layout,
    Generic,
}

pub struct CsvOut {
    writer: CsvAppender,
    style: ColumnStyle,
    layout: ChannelLayout,
    bands: Vec<BandSpec>,
    names: Option<Vec<String>>,
}

impl CsvOut {
    fn build(spec: &NodeSpec, ctx: &BuildContext) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let path = ctx.out_path(p.str("path")?);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| NodeError(format!("{}: {e}", dir.display())))?;
        }
        let style = match p.opt_str("columns")? {
            None | Some("generic") => ColumnStyle::Generic,
            Some("layout") => ColumnStyle::Layout,
            Some(o) => return Err(NodeError(format!("columns must be \"layout\" or \"generic\", not {o:?}"))),
        };
        let writer = CsvAppender::open(&path, p.bool_or("timestamp", true)?, None).map_err(NodeError::new)?;
        Ok(CsvOut {
            writer,
            style,
            layout: ctx.layout.clone(),
            bands: bands_param(&p, ctx)?,
            names: None,
        })
    }

    fn tree_names(&self, t: &DataTree) -> Vec<String> {
        let fits_layout = t.branch_count() == self.layout.len()
            && t.branches().all(|(p, v)| p.indices().len() == 1 && v.len() == self.bands.len());
        match self.style {
            ColumnStyle::Layout if fits_layout => layout_column_names(&self.layout, &self.bands),
            _ => generic_column_names(t),
        }
    }
}

impl Node for CsvOut {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        if !ctx.any_fresh() {
            return Ok(());
        }
        let inputs: Vec<(&str, Option<Input<'_>>)> = ctx.inputs().collect();
        if inputs.iter().any(|(_, i)| i.is_none()) {
            return Ok(());
        }
        let single = inputs.len() == 1;
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (port, i) in &inputs {
            match i.unwrap().value {
                Value::Tree(t) => {
                    let n = self.tree_names(t);
                    if single {
                        names.extend(n);
                    } else {
                        names.extend(n.into_iter().map(|c| format!("{port}_{c}")));
                    }
                    values.extend(t.flatten());
                }
                Value::Scalar(v) => {
                    names.push(port.to_string());
                    values.push(*v);
                }
                other => return Err(NodeError(format!("cannot write {} values", other.kind()))),
            }
        }
        if self.names.is_none() {
            self.names = Some(names.clone());
        }
        self.writer
            .append_row(&names, &values, chrono::Utc::now())
            .map_err(NodeError::new)
    }

    fn status(&self) -> Option<Json> {
        Some(serde_json::json!({
            "path": self.writer.path(),
            "rows": self.writer.rows_written(),
            "rejected": self.writer.rejected(),
        }))
    }
}

pub struct WebhookOut {
    dispatcher: WebhookDispatcher,
    fields: Vec<String>,
    precision: usize,
}

impl WebhookOut {
    fn build(spec: &NodeSpec, ctx: &BuildContext) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let template = if let Some(base) = ctx.env.get("NEURON_WEBHOOK_BASE") {
            webhook::template_for_base(base)
        } else if let Some(t) = p.opt_str("template")? {
            t.to_string()
        } else if let Some(b) = p.opt_str("base")? {
            webhook::template_for_base(b)
        } else {
            webhook::IFTTT_TEMPLATE.to_string()
        };
        let key = match ctx.env.get("NEURON_WEBHOOK_KEY") {
            Some(k) => k.clone(),
            None => p.opt_str("key")?.unwrap_or_default().to_string(),
        };
        if key.is_empty() && template.contains("{key}") {
            log::warn!("webhook node {}: no key configured", spec.id);
        }
        let mut cfg = WebhookConfig::new(template, key);
        if let Some(d) = p.parse::<Vec<u64>>("retry_delays_ms")? {
            cfg.retry.delays = d.into_iter().map(Duration::from_millis).collect();
        }
        if let Some(t) = p.opt_f64("timeout_ms")? {
            cfg.timeout = Duration::from_millis(t.max(1.0) as u64);
        }
        let fields = p.parse::<Vec<String>>("values")?.unwrap_or_else(|| vec!["value".into()]);
        if fields.len() > 3 {
            return Err(NodeError(format!("at most three values, got {}", fields.len())));
        }
        for f in &fields {
            if !["value", "threshold", "event", "source", "at"].contains(&f.as_str()) {
                return Err(NodeError(format!("unknown webhook value field {f:?}")));
            }
        }
        Ok(WebhookOut {
            dispatcher: WebhookDispatcher::spawn(cfg),
            fields,
            precision: p.u64_or("precision", 2)? as usize,
        })
    }

    fn values(&self, e: &TriggerEvent) -> Vec<String> {
        let prec = self.precision;
        self.fields
            .iter()
            .map(|f| match f.as_str() {
                "value" => format!("{:.prec$}", e.value),
                "threshold" => format!("{:.prec$}", e.threshold),
                "event" => e.event_name.clone(),
                "source" => e.source.clone(),
                _ => format!("{:.3}", e.at_s),
            })
            .collect()
    }
}

impl Node for WebhookOut {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        for (_, i) in ctx.inputs() {
            if let Some(Input { value: Value::Event(e), fresh: true, .. }) = i {
                self.dispatcher
                    .enqueue(&e.event_name, &self.values(e))
                    .map_err(NodeError::new)?;
            }
        }
        Ok(())
    }

    fn dropped(&self) -> u64 {
        self.dispatcher.stats().dropped
    }

    fn status(&self) -> Option<Json> {
        let s = self.dispatcher.stats();
        Some(serde_json::json!({
            "queued": s.queued, "delivered": s.delivered, "failed": s.failed, "dropped": s.dropped,
        }))
    }

    fn finish(&mut self) -> Result<(), NodeError> {
        if self.dispatcher.flush(Duration::from_secs(10)) {
            Ok(())
        } else {
            Err(NodeError("webhook queue did not drain".into()))
        }
    }
}

pub struct UdpOut {
    sender: UdpSender,
    seq: u64,
}

impl UdpOut {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let target = p.str("target")?;
        Ok(UdpOut {
            sender: UdpSender::new(target).map_err(NodeError::new)?,
            seq: 0,
        })
    }
}

impl Node for UdpOut {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let Some(i) = ctx.input("in").filter(|i| i.fresh) else {
            return Ok(());
        };
        let ts = i.ts_ms.unwrap_or_else(|| chrono::Utc::now().timestamp_millis().max(0) as u64);
        let packet = match i.value {
            Value::Packet(p) => p.clone(),
            Value::Tree(t) => WirePacket::new(PacketKind::BandPowerFrame, self.seq, ts, t.to_matrix()),
            other => return Err(NodeError(format!("cannot send {} values", other.kind()))),
        };
        self.seq += 1;
        self.sender.send(&packet).map_err(NodeError::new)?;
        Ok(())
    }
}

pub struct PlotNode {
    path: PathBuf,
    spec: PlotSpec,
    every: u64,
    max_points: usize,
    a: VecDeque<(f64, f64)>,
    b: VecDeque<(f64, f64)>,
    t0: Option<f64>,
    runs: u64,
}

impl PlotNode {
    fn build(spec: &NodeSpec, ctx: &BuildContext) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let two = spec.inputs.contains_key("b");
        let kind = match p.opt_str("plot")? {
            None if two => PlotKind::XyByTime,
            None | Some("x_by_time") => PlotKind::XByTime,
            Some("xy_by_time") => PlotKind::XyByTime,
            Some("hist_ci") => PlotKind::HistCi,
            Some(o) => return Err(NodeError(format!("unknown plot kind {o:?}"))),
        };
        if kind == PlotKind::XyByTime && !two {
            return Err(NodeError("xy_by_time needs a \"b\" input".into()));
        }
        let mut ps = PlotSpec::new(kind);
        if let Some(b) = p.opt_f64("bins")? {
            ps.bins = b as usize;
        }
        if let Some(l) = p.opt_f64("ci_level")? {
            ps.ci_level = l;
        }
        ps.title = p.opt_str("title")?.map(str::to_string);
        if two {
            let label = |port: &str| {
                spec.inputs
                    .get(port)
                    .map(|s| s.split('.').next().unwrap_or(s).to_string())
                    .unwrap_or_default()
            };
            ps.labels = Some([label("in"), label("b")]);
        }
        ps.validate().map_err(NodeError::new)?;
        let path = ctx.out_path(p.str("path")?);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| NodeError(format!("{}: {e}", dir.display())))?;
        }
        Ok(PlotNode {
            path,
            spec: ps,
            every: p.u64_or("every", 25)?.max(1),
            max_points: p.u64_or("max_points", 10_000)?.max(2) as usize,
            a: VecDeque::new(),
            b: VecDeque::new(),
            t0: None,
            runs: 0,
        })
    }

    fn render(&self) -> Result<(), NodeError> {
        let a: Vec<(f64, f64)> = self.a.iter().copied().collect();
        let svg = match self.spec.kind {
            PlotKind::XByTime => plot::plot_x_by_time(&a, &self.spec),
            PlotKind::XyByTime => {
                let b: Vec<(f64, f64)> = self.b.iter().copied().collect();
                plot::plot_xy_by_time(&a, &b, &self.spec)
            }
            PlotKind::HistCi => {
                let xs: Vec<f64> = a.iter().map(|p| p.1).collect();
                plot::plot_hist_ci(&xs, &self.spec)
            }
        };
        match svg {
            Ok(s) => std::fs::write(&self.path, s).map_err(|e| NodeError(format!("{}: {e}", self.path.display()))),
            Err(crate::sinks::SinkError::EmptySeries | crate::sinks::SinkError::InsufficientSamples { .. }) => Ok(()),
            Err(e) => Err(NodeError::new(e)),
        }
    }
}

impl Node for PlotNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let t_abs = ctx.now_s();
        let t = t_abs - *self.t0.get_or_insert(t_abs);
        for (port, series) in [("in", &mut self.a), ("b", &mut self.b)] {
            if let Some(v) = ctx.fresh_scalar(port) {
                series.push_back((t, v));
                if series.len() > self.max_points {
                    series.pop_front();
                }
            }
        }
        self.runs += 1;
        if self.runs.is_multiple_of(self.every) {
            self.render()?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), NodeError> {
        self.render()
    }
}

pub struct WsOut {
    label: Option<String>,
}

impl WsOut {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        Ok(WsOut {
            label: Params::of(spec).opt_str("label")?.map(str::to_string),
        })
    }
}

impl Node for WsOut {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let mut out = Vec::new();
        for (port, i) in ctx.inputs() {
            let Some(i) = i.filter(|i| i.fresh) else { continue };
            let label = match &self.label {
                Some(l) if port == "in" => l.clone(),
                Some(l) => format!("{l}.{port}"),
                None => port.to_string(),
            };
            let v = match i.value {
                Value::Scalar(x) => serde_json::json!(x),
                Value::Tree(t) => serde_json::json!(t.to_matrix()),
                Value::Event(e) => serde_json::to_value(e).unwrap_or(Json::Null),
                Value::Packet(_) => continue,
            };
            out.push((label, v));
        }
        for (l, v) in out {
            ctx.publish(&l, v);
        }
        Ok(())
    }
}

pub struct ConstNode {
    value: f64,
}

impl ConstNode {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        Ok(ConstNode {
            value: Params::of(spec).f64("value")?,
        })
    }
}

impl Node for ConstNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        ctx.emit_at("out", Value::Scalar(self.value), None);
        Ok(())
    }

    fn always_run(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Neg,
    Abs,
    Scale(f64),
    Offset(f64),
}

pub struct ExprNode {
    op: Op,
}

impl ExprNode {
    fn build(spec: &NodeSpec) -> Result<Self, NodeError> {
        let p = Params::of(spec);
        let op = match p.str("op")? {
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "div" => Op::Div,
            "min" => Op::Min,
            "max" => Op::Max,
            "neg" => Op::Neg,
            "abs" => Op::Abs,
            "scale" => Op::Scale(p.f64("k")?),
            "offset" => Op::Offset(p.f64("k")?),
            o => return Err(NodeError(format!("unknown op {o:?}"))),
        };
        let binary = matches!(op, Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max);
        if binary != spec.inputs.contains_key("b") {
            return Err(NodeError(format!(
                "op {:?} takes {} input(s)",
                p.str("op")?,
                if binary { 2 } else { 1 }
            )));
        }
        Ok(ExprNode { op })
    }
}

impl Node for ExprNode {
    fn execute(&mut self, ctx: &mut NodeCtx<'_>) -> Result<(), NodeError> {
        let value = |port: &str| ctx.input(port).and_then(|i| i.value.as_scalar());
        let Some(a) = value("a") else { return Ok(()) };
        let b = value("b");
        let v = match (self.op, b) {
            (Op::Neg, _) => -a,
            (Op::Abs, _) => a.abs(),
            (Op::Scale(k), _) => a * k,
            (Op::Offset(k), _) => a + k,
            (_, None) => return Ok(()),
            (Op::Add, Some(b)) => a + b,
            (Op::Sub, Some(b)) => a - b,
            (Op::Mul, Some(b)) => a * b,
            (Op::Div, Some(b)) => a / b,
            (Op::Min, Some(b)) => a.min(b),
            (Op::Max, Some(b)) => a.max(b),
        };
        if !v.is_finite() {
            return Err(NodeError(format!("result {v} is not finite")));
        }
        ctx.emit("out", Value::Scalar(v));
        Ok(())
    }
}
