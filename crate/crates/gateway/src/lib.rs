//! HTTP and WebSocket control plane for a running engine.
//!
//! The gateway owns one engine thread. Handlers read shared state directly and
//! send every mutation (graph load, start/stop, threshold, baseline) through a
//! queue that the engine drains between ticks. One WebSocket endpoint
//! multiplexes `tick`, `reading`, `event` and `calibration` messages.

mod api;
mod host;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use neuron_core::engine::Registry;
use thiserror::Error;
use tokio::sync::Notify;
use tower_http::services::ServeDir;

pub use api::CalibrationError;
pub use host::{Calibration, CommandError, EngineHost, EventRecord, State, CLIENT_QUEUE};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const TOKEN_ENV: &str = "NEURON_API_TOKEN";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
    #[error("server: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    /// Enables bearer auth on every route when set.
    pub token: Option<String>,
    /// Where sinks write and baselines are persisted.
    pub out_dir: PathBuf,
    /// Environment handed to node builders (webhook base and key).
    pub env: BTreeMap<String, String>,
    /// Served at `/` when set, for the dashboard bundle.
    pub static_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: DEFAULT_BIND.parse().unwrap(),
            token: None,
            out_dir: PathBuf::from("neuron-out"),
            env: BTreeMap::new(),
            static_dir: None,
        }
    }
}

/// A gateway serving on a background thread.
pub struct Gateway {
    addr: SocketAddr,
    host: Arc<EngineHost>,
    shutdown: Arc<Notify>,
    thread: Option<JoinHandle<Result<(), GatewayError>>>,
}

impl Gateway {
    /// Bind and start serving. Returns once the listener is bound.
    pub fn start(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        Self::start_with(cfg, Registry::builtin())
    }

    pub fn start_with(cfg: GatewayConfig, registry: Registry) -> Result<Self, GatewayError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("neuron-gateway")
            .enable_all()
            .build()
            .map_err(GatewayError::Runtime)?;
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind(cfg.bind))
            .map_err(|source| GatewayError::Bind { addr: cfg.bind, source })?;
        let addr = listener.local_addr().map_err(GatewayError::Runtime)?;
        let host = EngineHost::spawn(cfg.out_dir.clone(), cfg.env.clone(), registry);
        let mut router = api::router(api::App {
            host: host.clone(),
            token: cfg.token.clone(),
        });
        if let Some(dir) = &cfg.static_dir {
            router = router.fallback_service(ServeDir::new(dir));
        }
        let shutdown = Arc::new(Notify::new());
        let notify = shutdown.clone();
        let thread = std::thread::Builder::new()
            .name("neuron-gateway".into())
            .spawn(move || {
                runtime.block_on(async move {
                    axum::serve(listener, router)
                        .with_graceful_shutdown(async move { notify.notified().await })
                        .await
                        .map_err(GatewayError::Serve)
                })
            })
            .map_err(GatewayError::Runtime)?;
        log::info!("gateway listening on http://{addr}");
        Ok(Gateway {
            addr,
            host,
            shutdown,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn host(&self) -> &Arc<EngineHost> {
        &self.host
    }

    /// Block until the server exits.
    pub fn wait(mut self) -> Result<(), GatewayError> {
        let r = self.join();
        self.host.shutdown();
        r
    }

    /// Stop the server and the engine.
    pub fn stop(mut self) -> Result<(), GatewayError> {
        self.shutdown.notify_one();
        let r = self.join();
        self.host.shutdown();
        r
    }

    /// Handle that asks the server to shut down gracefully from another thread.
    pub fn shutdown_handle(&self) -> impl Fn() + Send + Sync + 'static {
        let n = self.shutdown.clone();
        move || n.notify_one()
    }

    fn join(&mut self) -> Result<(), GatewayError> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown.notify_one();
        let _ = self.join();
        self.host.shutdown();
    }
}
