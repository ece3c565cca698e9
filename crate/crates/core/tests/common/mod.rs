#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU16, Ordering};
use std::sync::{Arc, Mutex};

use neuron_core::engine::{load_graph, Engine, EngineOptions, Registry, SimClock};
use neuron_core::wire::{self, ChannelLayout, PacketKind, StateScript, SynthConfig, Synthesizer};
use neuron_core::GraphSpec;

pub const CURTAIN_SEED: u64 = 7;

pub fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub body: String,
}

/// Minimal HTTP/1.1 server recording every request and answering with a fixed status.
pub struct MockHook {
    pub addr: SocketAddr,
    requests: Arc<Mutex<Vec<Request>>>,
    status: Arc<AtomicU16>,
}

impl MockHook {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let status = Arc::new(AtomicU16::new(200));
        let (reqs, st) = (requests.clone(), status.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let mut reader = BufReader::new(stream);
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let method = parts.next().unwrap_or_default().to_string();
                let path = parts.next().unwrap_or_default().to_string();
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                reqs.lock().unwrap().push(Request {
                    method,
                    path,
                    body: String::from_utf8_lossy(&body).into_owned(),
                });
                let code = st.load(Ordering::SeqCst);
                let mut stream = reader.into_inner();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {code} X\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
                );
            }
        });
        MockHook { addr, requests, status }
    }

    pub fn base(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn set_status(&self, code: u16) {
        self.status.store(code, Ordering::SeqCst);
    }

    pub fn requests(&self) -> Vec<Request> {
        self.requests.lock().unwrap().clone()
    }
}

/// Writes the scripted curtain trace (FFT frames) and returns its path.
pub fn curtain_trace(dir: &Path) -> PathBuf {
    let script = StateScript::from_json(&std::fs::read_to_string(asset("curtain_script.json")).unwrap()).unwrap();
    let cfg = SynthConfig {
        seed: CURTAIN_SEED,
        ..SynthConfig::default()
    };
    let mut synth = Synthesizer::new(script, cfg, ChannelLayout::default()).unwrap();
    let mut packets = Vec::new();
    while !synth.is_finished() {
        packets.extend(synth.next_packets(&[PacketKind::FftFrame]).1);
    }
    let path = dir.join("curtain.trace.jsonl");
    wire::write_trace(std::fs::File::create(&path).unwrap(), &packets).unwrap();
    path
}

/// The shipped curtain graph reading from `trace` instead of a socket.
pub fn curtain_graph(trace: &Path, with_csv: bool) -> GraphSpec {
    let mut g = load_graph(&std::fs::read_to_string(asset("curtain.json")).unwrap()).unwrap();
    let eeg = g.nodes.iter_mut().find(|n| n.kind == "udp_in").unwrap();
    eeg.params.insert("trace".into(), trace.to_string_lossy().into_owned().into());
    g.run_seconds = Some(60.0);
    if with_csv {
        let csv = serde_json::json!({
            "id": "log", "kind": "csv_out",
            "params": { "path": "curtain.csv" },
            "inputs": { "attention": "attention_level", "workload": "workload_level" }
        });
        g.nodes.push(serde_json::from_value(csv).unwrap());
    }
    g
}

pub struct CurtainRun {
    pub events: Vec<String>,
    pub requests: Vec<Request>,
    pub out_dir: PathBuf,
}

/// Replays the curtain trace through the engine on a simulated clock.
pub fn run_curtain(trace: &Path, out_dir: &Path, hook: &MockHook) -> CurtainRun {
    let g = curtain_graph(trace, true);
    let env = BTreeMap::from([
        ("NEURON_WEBHOOK_BASE".to_string(), hook.base()),
        ("NEURON_WEBHOOK_KEY".to_string(), "test-key".to_string()),
    ]);
    let before = hook.requests().len();
    let opts = EngineOptions {
        out_dir: out_dir.to_path_buf(),
        env,
        ..EngineOptions::default()
    };
    let mut engine = Engine::new(g, &Registry::builtin(), opts).unwrap();
    let stop = AtomicBool::new(false);
    engine.run(&SimClock::new(), &stop, &mut |_, _| true);
    let errors = engine.finish();
    assert!(errors.is_empty(), "{errors:?}");
    let events = engine.event_log().iter().map(|e| e.event.event_name.clone()).collect();
    CurtainRun {
        events,
        requests: hook.requests()[before..].to_vec(),
        out_dir: out_dir.to_path_buf(),
    }
}
