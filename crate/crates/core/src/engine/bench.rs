use std::time::Instant;

use serde::Serialize;

use super::graph::NodeSpec;
use super::nodes::{BuildContext, Node, NodeCtx, NodeError, Registry, UdpIn};
use super::runtime::{MonotonicClock, Slot};
use super::{Value, ValueKind};
use crate::dsp::{self, Spectrum};
use crate::metrics;
use crate::sinks::trigger::TriggerEvent;
use crate::wire::{self, PacketKind, WirePacket};

pub const MIN_BENCH_REPS: usize = 30;
const WARMUP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub kind: String,
    pub reps: usize,
    pub mean_us: f64,
    pub std_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

impl BenchResult {
    fn from_samples(kind: &str, us: &[f64]) -> Self {
        BenchResult {
            kind: kind.to_string(),
            reps: us.len(),
            mean_us: crate::stats::mean(us),
            std_us: crate::stats::sample_variance(us).sqrt(),
            min_us: us.iter().copied().fold(f64::INFINITY, f64::min),
            max_us: us.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn inputs_for(kind: ValueKind, packets: &[WirePacket], ctx: &BuildContext) -> Result<Vec<Value>, NodeError> {
    let trees = || -> Result<Vec<_>, NodeError> {
        packets
            .iter()
            .map(|p| {
                let spec = match p.kind {
                    PacketKind::RawWindow => dsp::fft_spectrum(&p.payload, 125.0),
                    _ => Spectrum::from_bins(125.0, p.payload.clone()),
                }
                .map_err(NodeError::new)?;
                dsp::band_matrix(&spec, &ctx.bands).map_err(NodeError::new)
            })
            .collect()
    };
    let scalars = || -> Result<Vec<f64>, NodeError> {
        let def = metrics::builtin_metric("attention").map_err(NodeError::new)?;
        trees()?
            .iter()
            .map(|t| metrics::eval_metric(&def, t, &ctx.bands, &ctx.layout).map_err(NodeError::new))
            .collect()
    };
    Ok(match kind {
        ValueKind::Packet => packets.iter().cloned().map(Value::Packet).collect(),
        ValueKind::Tree => trees()?.into_iter().map(Value::Tree).collect(),
        ValueKind::Scalar => scalars()?.into_iter().map(Value::Scalar).collect(),
        ValueKind::Event => scalars()?
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                Value::Event(TriggerEvent {
                    event_name: "bench".into(),
                    source: "bench".into(),
                    value: v,
                    threshold: 0.5,
                    at_s: i as f64,
                })
            })
            .collect(),
    })
}

/// Time one node kind in isolation over `reps` executions, after a short warm-up.
///
/// `packets` supply the input stream; they are converted to whatever the node consumes
/// beforehand so only the node itself is measured. `udp_in` is timed on parsing
/// the packets' encoded datagrams.
pub fn bench_node(
    kind: &str,
    params: serde_json::Map<String, serde_json::Value>,
    packets: &[WirePacket],
    reps: usize,
) -> Result<BenchResult, NodeError> {
    if reps < MIN_BENCH_REPS {
        return Err(NodeError(format!("need at least {MIN_BENCH_REPS} repetitions, got {reps}")));
    }
    if packets.is_empty() {
        return Err(NodeError("no input packets".into()));
    }
    let registry = Registry::builtin();
    let info = registry
        .info(kind)
        .ok_or_else(|| NodeError(format!("unknown kind {kind:?}")))?
        .clone();
    let ctx = BuildContext {
        out_dir: std::env::temp_dir().join("neuron-bench"),
        ..BuildContext::default()
    };
    let mut spec = NodeSpec::new("bench", kind);
    spec.params = params;
    let ports: Vec<(String, ValueKind)> = if !info.inputs.is_empty() {
        info.inputs
            .iter()
            .filter(|p| p.required)
            .map(|p| (p.name.clone(), p.accepts[0]))
            .collect()
    } else if let Some(v) = &info.variadic {
        vec![("in".to_string(), v[0])]
    } else {
        Vec::new()
    };
    for (port, _) in &ports {
        spec.inputs.insert(port.clone(), "src".into());
    }
    let mut node: Box<dyn Node> = if kind == "udp_in" {
        let bytes = packets
            .iter()
            .map(wire::encode_packet)
            .collect::<Result<Vec<_>, _>>()
            .map_err(NodeError::new)?;
        Box::new(UdpIn::from_datagrams(bytes))
    } else {
        registry.build(&spec, &ctx)?
    };
    let streams: Vec<Vec<Value>> = ports
        .iter()
        .map(|(_, k)| inputs_for(*k, packets, &ctx))
        .collect::<Result<_, _>>()?;
    let clock = MonotonicClock::new();
    let mut samples = Vec::with_capacity(reps);
    for i in 0..reps + WARMUP {
        let tick = i as u64;
        let ts = packets[i % packets.len()].timestamp_ms;
        let slots: Vec<Slot> = streams
            .iter()
            .map(|s| Slot {
                value: s[i % s.len()].clone(),
                ts_ms: Some(ts),
                tick,
            })
            .collect();
        let refs = ports.iter().zip(&slots).map(|((p, _), s)| (p.as_str(), Some(s))).collect();
        let t0 = Instant::now();
        let mut nctx = NodeCtx::new("bench", tick, 0, &clock, refs);
        node.execute(&mut nctx)?;
        let us = t0.elapsed().as_secs_f64() * 1e6;
        if i >= WARMUP {
            samples.push(us);
        }
    }
    let _ = node.finish();
    Ok(BenchResult::from_samples(kind, &samples))
}
