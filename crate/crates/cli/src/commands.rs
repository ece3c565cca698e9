use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use neuron_core::dsp;
use neuron_core::engine::{self, Engine, EngineOptions, MonotonicClock, Registry, SimClock};
use neuron_core::learn::{self, Labels, SplitMode};
use neuron_core::metrics::{self, AnchorStatistic, CalibrationOptions, CalibrationSamples, Phase};
use neuron_core::sinks::plot::{self, PlotKind, PlotSpec};
use neuron_core::wire::{self, ReceiverHandle, UdpSender};
use neuron_core::{ChannelLayout, Dataset, GraphSpec, ModelKind, ModelSpec, PacketKind, TrainedModel};
use neuron_gateway::{Gateway, GatewayConfig};
use serde_json::{json, Value as Json};

use crate::offline::{self, band_tree};
use crate::*;

const FS_HZ: f64 = 125.0;

pub fn dispatch(cli: Cli) -> Result<()> {
    let out = cli.out;
    match cli.command {
        Command::Run(a) => run(&out, a),
        Command::Simulate(a) => simulate(&out, a),
        Command::Calibrate(a) => calibrate(&out, a),
        Command::Record(a) => record(&out, a),
        Command::Train(a) => train(&out, a),
        Command::Validate(a) => validate(&out, a),
        Command::Predict(a) => predict(a),
        Command::Bench(a) => bench(a),
        Command::Plot(a) => plot(&out, a),
        Command::Serve(a) => serve(&out, a),
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn stop_on_ctrl_c() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
    stop
}

fn webhook_env(w: &WebhookArgs) -> BTreeMap<String, String> {
    let mut env = BTreeMap::new();
    if let Some(b) = &w.webhook_base {
        env.insert("NEURON_WEBHOOK_BASE".to_string(), b.clone());
    }
    if let Some(k) = &w.webhook_key {
        env.insert("NEURON_WEBHOOK_KEY".to_string(), k.clone());
    }
    env
}

fn read_graph(path: &Path) -> Result<GraphSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    engine::load_graph(&text).with_context(|| format!("loading {}", path.display()))
}

fn epoch_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn run(out: &Path, a: RunArgs) -> Result<()> {
    let mut g = read_graph(&a.graph)?;
    let sources: Vec<_> = g.nodes.iter_mut().filter(|n| n.kind == "udp_in").collect();
    if (a.trace.is_some() || a.port.is_some()) && sources.is_empty() {
        bail!("--trace/--port given but the graph has no udp_in node");
    }
    for n in sources {
        if let Some(t) = &a.trace {
            n.params.remove("port");
            n.params.remove("bind");
            n.params.insert("trace".into(), t.display().to_string().into());
        } else if let Some(p) = a.port {
            n.params.remove("bind");
            n.params.insert("port".into(), p.into());
        }
    }
    if let Some(s) = a.seconds {
        g.run_seconds = Some(s);
    }
    if let Some(t) = a.tick_ms {
        g.tick_ms = t;
    }
    create_out(out)?;
    let opts = EngineOptions {
        out_dir: out.to_path_buf(),
        env: webhook_env(&a.webhook),
        telemetry: a.telemetry.map(|t| out.join(t)),
        ..EngineOptions::default()
    };
    let mut engine = Engine::new(g, &Registry::builtin(), opts)?;
    let log_path = out.join("events.log");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let stop = stop_on_ctrl_c();
    let mut write_err = None;
    let mut on_tick = |_: &mut Engine, r: &engine::TickReport| {
        for e in &r.events {
            let line = serde_json::to_string(e).expect("events serialize");
            if let Err(err) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_err = Some(err);
                return false;
            }
            log::info!("tick {}: {} fired {}", e.tick_index, e.node, e.event.event_name);
        }
        true
    };
    let summary = if a.sim {
        engine.run(&SimClock::new(), &stop, &mut on_tick)
    } else {
        engine.run(&MonotonicClock::new(), &stop, &mut on_tick)
    };
    let errors = engine.finish();
    if let Some(e) = write_err {
        return Err(e).context("writing events.log");
    }
    println!(
        "{}",
        json!({
            "ticks_run": summary.ticks_run,
            "ticks_skipped": summary.ticks_skipped,
            "events": summary.events,
            "node_errors": summary.node_errors,
            "interrupted": summary.interrupted,
            "events_log": log_path,
        })
    );
    if !errors.is_empty() {
        bail!("nodes failed to finish: {errors:?}");
    }
    Ok(())
}

fn wire_kind(k: WireKind) -> PacketKind {
    match k {
        WireKind::Raw => PacketKind::RawWindow,
        WireKind::Fft => PacketKind::FftFrame,
        WireKind::BandPower => PacketKind::BandPowerFrame,
    }
}

fn simulate(out: &Path, a: SimulateArgs) -> Result<()> {
    let script = offline::load_script(&a.script)?;
    let kinds: Vec<PacketKind> = a.kind.iter().copied().map(wire_kind).collect();
    if a.trace_out.is_none() && a.loop_script && a.seconds.is_none() {
        log::info!("looping until Ctrl-C");
    }
    let start_ms = if a.trace_out.is_some() { 0 } else { epoch_ms() };
    let mut synth = offline::synthesizer(script, a.seed, a.loop_script, start_ms)?;
    let limit = a.seconds.unwrap_or(f64::INFINITY);
    let done = |synth: &neuron_core::wire::Synthesizer, t: f64| synth.is_finished() || t >= limit;

    if let Some(path) = a.trace_out {
        if a.loop_script && a.seconds.is_none() {
            bail!("--trace-out with --loop needs --seconds");
        }
        let mut packets = Vec::new();
        loop {
            let (frame, p) = synth.next_packets(&kinds);
            if frame.time_s >= limit {
                break;
            }
            packets.extend(p);
            if done(&synth, frame.time_s) {
                break;
            }
        }
        let path = out.join(path);
        create_out(path.parent().unwrap_or(out))?;
        wire::write_trace(BufWriter::new(File::create(&path)?), &packets)?;
        println!("{}", json!({ "packets": packets.len(), "trace": path }));
        return Ok(());
    }

    let sender = UdpSender::new((a.host.as_str(), a.port))?;
    log::info!("streaming to {}", sender.dest());
    let stop = stop_on_ctrl_c();
    let t0 = Instant::now();
    let mut sent = 0u64;
    while !stop.load(Ordering::Relaxed) {
        let (frame, packets) = synth.next_packets(&kinds);
        if frame.time_s >= limit {
            break;
        }
        let due = Duration::from_secs_f64(frame.time_s);
        if let Some(wait) = due.checked_sub(t0.elapsed()) {
            std::thread::sleep(wait);
        }
        for p in &packets {
            sender.send(p)?;
            sent += 1;
        }
        if done(&synth, frame.time_s) {
            break;
        }
    }
    println!("{}", json!({ "packets_sent": sent, "seconds": t0.elapsed().as_secs_f64() }));
    Ok(())
}

fn calibrate(out: &Path, a: CalibrateArgs) -> Result<()> {
    let opts = CalibrationOptions {
        min_samples: a.min_samples,
        statistic: match a.statistic {
            Statistic::Mean => AnchorStatistic::Mean,
            Statistic::Percentile => AnchorStatistic::Percentile,
        },
    };
    let dir = out.join("baselines");
    let samples = match (&a.samples, &a.script) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            CalibrationSamples::from_csv(&text)?
        }
        (None, Some(script_path)) => {
            let samples = script_samples(script_path, &a)?;
            write_file(&dir.join(format!("{}.samples.csv", a.metric)), &samples.to_csv())?;
            samples
        }
        (None, None) => bail!("give --samples or --script"),
    };
    let baseline = samples.baseline(&a.metric, &opts)?;
    let text = baseline.to_json();
    write_file(&dir.join(format!("{}.json", a.metric)), &text)?;
    print!("{text}");
    Ok(())
}

fn script_samples(path: &Path, a: &CalibrateArgs) -> Result<CalibrationSamples> {
    let script = offline::load_script(path)?;
    let def = metrics::builtin_metric(&a.metric)?;
    let bands = dsp::default_bands();
    let layout = ChannelLayout::default();
    let mut samples = CalibrationSamples::default();
    for (frame, packet) in offline::script_frames(script.clone(), a.seed)? {
        let phase = match frame.label.as_deref() {
            Some(l) if l == a.low_label => Phase::Low,
            Some(l) if l == a.high_label => Phase::High,
            _ => continue,
        };
        if offline::time_in_segment(&script, frame.time_s) < a.settle_s {
            continue;
        }
        let tree = band_tree(&packet, FS_HZ, &bands)?;
        let v = metrics::eval_metric(&def, &tree, &bands, &layout)?;
        samples.push(phase, packet.timestamp_ms, v);
    }
    if samples.low.is_empty() || samples.high.is_empty() {
        bail!(
            "script has no samples labelled {:?} and {:?} after settling",
            a.low_label,
            a.high_label
        );
    }
    Ok(samples)
}

fn record(out: &Path, a: RecordArgs) -> Result<()> {
    let dir = out.join("recordings").join(&a.session);
    let mut rec = learn::Recorder::categorical(&dir, None);
    let bands = dsp::default_bands();
    if let Some(path) = &a.script {
        let script = offline::load_script(path)?;
        for (frame, packet) in offline::script_frames(script, a.seed)? {
            let Some(label) = frame.label.as_deref() else { continue };
            rec.record_class(&band_tree(&packet, FS_HZ, &bands)?, label)?;
        }
    } else {
        let port = a.port.expect("clap requires --port or --script");
        let class = a.class.as_deref().expect("clap requires --class with --port");
        let rx = ReceiverHandle::spawn(("0.0.0.0", port), None)?;
        log::info!("recording class {class} from udp port {}", rx.local_addr().port());
        let stop = stop_on_ctrl_c();
        let t0 = Instant::now();
        while t0.elapsed().as_secs_f64() < a.seconds && !stop.load(Ordering::Relaxed) {
            if let wire::Latest::Fresh(p) = rx.latest() {
                if let Err(e) = rec.record_class(&band_tree(&p, FS_HZ, &bands)?, class) {
                    log::warn!("skipped packet {}: {e}", p.seq);
                }
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
    println!(
        "{}",
        json!({ "rows": rec.rows_written(), "rejected": rec.rejected(), "dir": dir })
    );
    Ok(())
}

fn parse_kv(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected NAME=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn train(out: &Path, a: TrainArgs) -> Result<()> {
    let kind = ModelKind::parse(&a.model).ok_or_else(|| anyhow!("unknown model kind {:?}", a.model))?;
    let mut spec = ModelSpec::new(kind, a.seed);
    for p in &a.params {
        let (k, v) = parse_kv(p)?;
        let v: f64 = v.parse().with_context(|| format!("parameter {k}"))?;
        spec = spec.with(&k, v);
    }
    let mut ds = Dataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    if let Some(w) = a.window {
        ds = ds.window_average(w);
    }
    let mode = match a.split_mode {
        SplitModeArg::Stratified => SplitMode::Stratified,
        SplitModeArg::Random => SplitMode::Random,
        SplitModeArg::BySession => SplitMode::BySession,
    };
    let (train_set, holdout) = learn::split(&ds, a.split, a.seed, mode)?;
    let model = learn::train(&train_set, &spec)?;
    create_out(out)?;
    model.save(out.join("model.json"))?;
    log::info!("wrote {}", out.join("model.json").display());
    let report = report_json(&model, &holdout, a.threshold)?;
    write_file(&out.join("report.json"), &report)?;
    print!("{report}");
    Ok(())
}

fn report_json(model: &TrainedModel, holdout: &Dataset, threshold: f64) -> Result<String> {
    Ok(match holdout.labels {
        Labels::Categorical { .. } => learn::validate(model, holdout, threshold)?.to_json(),
        Labels::Continuous { .. } => {
            let r = learn::validate_regression(model, holdout)?;
            serde_json::to_string_pretty(&r)? + "\n"
        }
    })
}

fn load_for(model: &TrainedModel, data: &Path) -> Result<Dataset> {
    let ds = Dataset::load(data).with_context(|| format!("loading {}", data.display()))?;
    Ok(match &model.classes {
        Some(c) => ds.with_class_order(c)?,
        None => ds,
    })
}

fn validate(out: &Path, a: ValidateArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let ds = load_for(&model, &a.data)?;
    let report = report_json(&model, &ds, a.threshold)?;
    write_file(&out.join("validation.json"), &report)?;
    print!("{report}");
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let ds = Dataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let classes = model.classes.clone().unwrap_or_default();
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    writeln!(w, "row,session,score,class")?;
    for (i, x) in ds.features.iter().enumerate() {
        let p = model.predict(x, Some(a.threshold))?;
        let class = p.class.and_then(|c| classes.get(c).cloned()).unwrap_or_default();
        writeln!(w, "{i},{},{},{class}", ds.sessions[i], p.score)?;
    }
    w.flush()?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.channels == 0 {
        bail!("--channels must be at least 1");
    }
    let mut params = serde_json::Map::new();
    for p in &a.params {
        let (k, v) = parse_kv(p)?;
        let value = serde_json::from_str(&v).unwrap_or(Json::String(v));
        params.insert(k, value);
    }
    let script = offline::load_script_str(include_str!("../../../assets/focus_relax.json"))?;
    let mut synth = offline::synthesizer(script, a.seed, true, 0)?;
    let packets: Vec<_> = (0..64)
        .map(|_| {
            let mut p = synth.next_packets(&[PacketKind::FftFrame]).1.remove(0);
            let rows = p.payload.clone();
            p.payload = (0..a.channels).map(|c| rows[c % rows.len()].clone()).collect();
            p
        })
        .collect();
    let r = engine::bench_node(&a.node, params, &packets, a.reps).map_err(|e| anyhow!("{e}"))?;
    if a.json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        println!(
            "{}: mean {:.4} ms, std {:.4} ms over {} reps (min {:.4}, max {:.4})",
            r.kind,
            r.mean_us / 1000.0,
            r.std_us / 1000.0,
            r.reps,
            r.min_us / 1000.0,
            r.max_us / 1000.0
        );
    }
    Ok(())
}

fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ));
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!("no column {name:?} in {}", path.display()))?;
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        values.push(cell.parse().with_context(|| format!("row {}: {cell:?}", i + 1))?);
    }
    Ok(values)
}

fn plot(out: &Path, a: PlotArgs) -> Result<()> {
    let kind = match a.kind {
        PlotKindArg::XByTime => PlotKind::XByTime,
        PlotKindArg::XyByTime => PlotKind::XyByTime,
        PlotKindArg::HistCi => PlotKind::HistCi,
    };
    let mut spec = PlotSpec::new(kind);
    spec.bins = a.bins;
    spec.ci_level = a.ci_level;
    spec.title = a.title.clone();
    let timed = |v: Vec<f64>| -> Vec<(f64, f64)> { v.into_iter().enumerate().map(|(i, x)| (i as f64 * a.dt, x)).collect() };
    let first = read_column(&a.csv, &a.column)?;
    let svg = match kind {
        PlotKind::XByTime => plot::plot_x_by_time(&timed(first), &spec)?,
        PlotKind::XyByTime => {
            let second = a.column2.as_deref().ok_or_else(|| anyhow!("xy-by-time needs --column2"))?;
            spec.labels = Some([a.column.clone(), second.to_string()]);
            let b = read_column(&a.csv, second)?;
            plot::plot_xy_by_time(&timed(first), &timed(b), &spec)?
        }
        PlotKind::HistCi => plot::plot_hist_ci(&first, &spec)?,
    };
    write_file(&out.join(&a.output), &svg)?;
    Ok(())
}

fn serve(out: &Path, a: ServeArgs) -> Result<()> {
    create_out(out)?;
    let cfg = GatewayConfig {
        bind: a.bind,
        token: a.token.clone(),
        out_dir: out.to_path_buf(),
        env: webhook_env(&a.webhook),
        static_dir: a.static_dir.clone(),
    };
    let gw = Gateway::start(cfg)?;
    println!("{}", json!({ "listening": format!("http://{}", gw.addr()) }));
    if let Some(path) = &a.graph {
        let g = read_graph(path)?;
        let id = gw.host().load_blocking(g).context("loading startup graph")?;
        log::info!("loaded {} as {id}", path.display());
        if a.start {
            gw.host().start_blocking()?;
        }
    }
    let shutdown = gw.shutdown_handle();
    if let Err(e) = ctrlc::set_handler(shutdown) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
    gw.wait()?;
    Ok(())
}
