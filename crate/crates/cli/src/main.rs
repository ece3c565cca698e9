//! `neuron`: batch and operational entry points for the EEG pipeline.

mod commands;
mod offline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "neuron", version, about = "EEG dataflow engine: stream, calibrate, learn and trigger")]
pub struct Cli {
    /// Directory every output file is written under.
    #[arg(long, global = true, default_value = "neuron-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a graph on the tick schedule and log fired events to events.log.
    Run(RunArgs),
    /// Stream synthetic EEG packets from a state script over UDP.
    Simulate(SimulateArgs),
    /// Compute a low/high baseline for a metric and persist it.
    Calibrate(CalibrateArgs),
    /// Record labelled band-power rows for training.
    Record(RecordArgs),
    /// Train a model on recordings and write model.json and report.json.
    Train(TrainArgs),
    /// Score a saved model on a recording directory.
    Validate(ValidateArgs),
    /// Print per-row predictions of a saved model as CSV.
    Predict(PredictArgs),
    /// Time one node kind in isolation.
    Bench(BenchArgs),
    /// Render a column of a CSV log as an SVG plot.
    Plot(PlotArgs),
    /// Serve the HTTP/WebSocket control API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct WebhookArgs {
    /// Webhook service base URL; overrides the graph's webhook settings.
    #[arg(long, env = "NEURON_WEBHOOK_BASE")]
    pub webhook_base: Option<String>,
    /// Key substituted into webhook URLs.
    #[arg(long, env = "NEURON_WEBHOOK_KEY", hide_env_values = true)]
    pub webhook_key: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Graph JSON file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Replay this packet trace instead of listening on UDP.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// UDP port for every udp_in node.
    #[arg(long)]
    pub port: Option<u16>,
    /// Stop after this many seconds (default: the graph's run_seconds, else until Ctrl-C).
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Tick period in milliseconds.
    #[arg(long)]
    pub tick_ms: Option<u64>,
    /// Use a simulated clock: ticks run back to back with no sleeping.
    #[arg(long)]
    pub sim: bool,
    /// Write every TickReport as a JSON line to this file (relative to --out).
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
    #[command(flatten)]
    pub webhook: WebhookArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WireKind {
    Raw,
    Fft,
    #[value(name = "band-power")]
    BandPower,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// State script JSON.
    #[arg(long)]
    pub script: PathBuf,
    /// Destination UDP port.
    #[arg(long, default_value_t = 12345)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Packet kinds to emit each frame.
    #[arg(long, value_enum, default_values_t = [WireKind::Fft])]
    pub kind: Vec<WireKind>,
    /// Restart the script when it ends.
    #[arg(long = "loop")]
    pub loop_script: bool,
    /// Stop after this many seconds of data.
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Write the packets to this trace file (relative to --out) instead of sending them.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Statistic {
    Mean,
    Percentile,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Metric name written into the baseline; with --script, a builtin metric.
    #[arg(long)]
    pub metric: String,
    /// Recorded samples CSV (phase,timestamp_ms,value), as saved by the gateway.
    #[arg(long, conflicts_with = "script", required_unless_present = "script")]
    pub samples: Option<PathBuf>,
    /// Synthesize both phases from a state script.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Segment label sampled as the low phase.
    #[arg(long, default_value = "relax")]
    pub low_label: String,
    /// Segment label sampled as the high phase.
    #[arg(long, default_value = "focus")]
    pub high_label: String,
    /// Seconds skipped at the start of each segment.
    #[arg(long, default_value_t = 1.0)]
    pub settle_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Statistic::Mean)]
    pub statistic: Statistic,
    #[arg(long, default_value_t = 8)]
    pub min_samples: usize,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Synthesize from a state script; rows are labelled by segment.
    #[arg(long, conflicts_with = "port", required_unless_present = "port")]
    pub script: Option<PathBuf>,
    /// Listen for packets on this UDP port.
    #[arg(long, requires = "class")]
    pub port: Option<u16>,
    /// Class label for live recording.
    #[arg(long)]
    pub class: Option<String>,
    /// Live recording length.
    #[arg(long, default_value_t = 10.0)]
    pub seconds: f64,
    /// Session directory name under recordings/.
    #[arg(long, default_value = "session1")]
    pub session: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitModeArg {
    Stratified,
    Random,
    #[value(name = "by-session")]
    BySession,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Recording directory (one subdirectory per session, one CSV per class).
    #[arg(long)]
    pub data: PathBuf,
    /// Model kind: logreg, knn or mlp.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, value_enum, default_value_t = SplitModeArg::Stratified)]
    pub split_mode: SplitModeArg,
    /// Hyperparameter override, as name=value; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    /// Decision threshold for the validation report.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Average each run of this many consecutive rows before training.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Saved model.json.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Saved model.json.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Node kind to time.
    #[arg(long)]
    pub node: String,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Node parameter, as name=value (value parsed as JSON when possible); repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotKindArg {
    #[value(name = "x-by-time")]
    XByTime,
    #[value(name = "xy-by-time")]
    XyByTime,
    #[value(name = "hist-ci")]
    HistCi,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CSV log with a header row.
    #[arg(long)]
    pub csv: PathBuf,
    /// Column plotted (first series).
    #[arg(long)]
    pub column: String,
    /// Second column, for xy-by-time.
    #[arg(long)]
    pub column2: Option<String>,
    #[arg(long, value_enum, default_value_t = PlotKindArg::XByTime)]
    pub kind: PlotKindArg,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long)]
    pub title: Option<String>,
    /// Seconds between rows, for the time axis.
    #[arg(long, default_value_t = 0.04)]
    pub dt: f64,
    /// SVG file name (relative to --out).
    #[arg(long, default_value = "plot.svg")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = neuron_gateway::DEFAULT_BIND)]
    pub bind: std::net::SocketAddr,
    /// Bearer token required on every request.
    #[arg(long, env = "NEURON_API_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Directory of dashboard files served at /.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Load this graph at startup.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Start the loaded graph immediately.
    #[arg(long, requires = "graph")]
    pub start: bool,
    #[command(flatten)]
    pub webhook: WebhookArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
