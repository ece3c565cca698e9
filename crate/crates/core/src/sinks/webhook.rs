//! IFTTT-style webhook delivery.
//!
//! Events are POSTed to a templated URL with a JSON body of up to three
//! string values (`value1`..`value3`). [`WebhookDispatcher`] decouples
//! delivery from the caller with a bounded, oldest-dropping queue served by a
//! worker thread.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::SinkError;

pub const IFTTT_TEMPLATE: &str = "https://maker.ifttt.com/trigger/{event}/with/key/{key}";
pub const QUEUE_CAPACITY: usize = 1024;

fn redact(text: &str, key: &str) -> String {
    if key.is_empty() {
        text.to_string()
    } else {
        text.replace(key, "<redacted>")
    }
}

/// Template for a base URL taken from `NEURON_WEBHOOK_BASE`.
pub fn template_for_base(base: &str) -> String {
    format!("{}/trigger/{{event}}/with/key/{{key}}", base.trim_end_matches('/'))
}

pub fn render_url(template: &str, event: &str, key: &str) -> String {
    template.replace("{event}", event).replace("{key}", key)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebhookBody {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value1: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value2: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value3: Option<String>,
}

impl WebhookBody {
    pub fn from_values(values: &[String]) -> Result<Self, SinkError> {
        if values.len() > 3 {
            return Err(SinkError::TooManyValues(values.len()));
        }
        let mut it = values.iter().cloned();
        Ok(WebhookBody {
            value1: it.next(),
            value2: it.next(),
            value3: it.next(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Delay before each retry; its length is the retry count.
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            delays: vec![Duration::from_secs(1), Duration::from_secs(4)],
        }
    }
}

#[derive(Clone)]
pub struct WebhookConfig {
    pub template: String,
    key: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl fmt::Debug for WebhookConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WebhookConfig")
            .field("template", &self.template)
            .field("key", &"<redacted>")
            .field("retry", &self.retry)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl WebhookConfig {
    pub fn new(template: impl Into<String>, key: impl Into<String>) -> Self {
        WebhookConfig {
            template: template.into(),
            key: key.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(10),
        }
    }

    pub fn url_for(&self, event: &str) -> String {
        render_url(&self.template, event, &self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryResult {
    pub event: String,
    pub status: u16,
    pub rtt_ms: f64,
    pub attempts: u32,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post_once(agent: &ureq::Agent, url: &str, body: &WebhookBody) -> Result<u16, String> {
    let json = serde_json::to_string(body).map_err(|e| e.to_string())?;
    match agent
        .post(url)
        .header("content-type", "application/json")
        .send(json.as_str())
    {
        Ok(resp) => Ok(resp.status().as_u16()),
        Err(e) => Err(e.to_string()),
    }
}

fn deliver(
    agent: &ureq::Agent,
    cfg: &WebhookConfig,
    event: &str,
    body: &WebhookBody,
    stop: Option<&AtomicBool>,
) -> Result<DeliveryResult, SinkError> {
    let url = cfg.url_for(event);
    let mut attempts = 0;
    let mut last_status = None;
    let mut reason = String::new();
    for delay in std::iter::once(None).chain(cfg.retry.delays.iter().map(Some)) {
        if let Some(d) = delay {
            if !pause(*d, stop) {
                break;
            }
        }
        attempts += 1;
        let started = Instant::now();
        match post_once(agent, &url, body) {
            Ok(status) if (200..300).contains(&status) => {
                return Ok(DeliveryResult {
                    event: event.to_string(),
                    status,
                    rtt_ms: started.elapsed().as_secs_f64() * 1e3,
                    attempts,
                });
            }
            Ok(status) => {
                last_status = Some(status);
                reason = format!("HTTP {status}");
            }
            Err(e) => reason = redact(&e, &cfg.key),
        }
    }
    Err(SinkError::DeliveryFailed {
        status: last_status,
        attempts,
        reason,
    })
}

/// Sleeps for `d` unless `stop` is raised first; returns false if interrupted.
fn pause(d: Duration, stop: Option<&AtomicBool>) -> bool {
    let Some(stop) = stop else {
        std::thread::sleep(d);
        return true;
    };
    let until = Instant::now() + d;
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = Instant::now();
        if now >= until {
            return true;
        }
        std::thread::sleep((until - now).min(Duration::from_millis(10)));
    }
}

/// Blocking delivery with retries.
pub fn webhook_fire(
    cfg: &WebhookConfig,
    event: &str,
    values: &[String],
) -> Result<DeliveryResult, SinkError> {
    let body = WebhookBody::from_values(values)?;
    deliver(&agent(cfg.timeout), cfg, event, &body, None)
}

#[derive(Debug, Clone)]
struct Job {
    event: String,
    body: WebhookBody,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DispatchStats {
    pub queued: u64,
    pub delivered: u64,
    pub failed: u64,
    /// Events discarded because the queue was full.
    pub dropped: u64,
    pub last_results: Vec<DeliveryResult>,
}

struct Shared {
    queue: Mutex<VecDeque<Job>>,
    ready: Condvar,
    stats: Mutex<DispatchStats>,
    stop: AtomicBool,
}

/// Queue-backed webhook sender; [`WebhookDispatcher::enqueue`] never blocks on the network.
pub struct WebhookDispatcher {
    shared: Arc<Shared>,
    capacity: usize,
    worker: Option<JoinHandle<()>>,
}

impl WebhookDispatcher {
    pub fn spawn(cfg: WebhookConfig) -> Self {
        Self::with_capacity(cfg, QUEUE_CAPACITY)
    }

    pub fn with_capacity(cfg: WebhookConfig, capacity: usize) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::new(VecDeque::with_capacity(capacity.min(QUEUE_CAPACITY))),
            ready: Condvar::new(),
            stats: Mutex::new(DispatchStats::default()),
            stop: AtomicBool::new(false),
        });
        let worker = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("webhook".into())
                .spawn(move || worker_loop(&shared, &cfg))
                .expect("spawn webhook worker")
        };
        WebhookDispatcher {
            shared,
            capacity: capacity.max(1),
            worker: Some(worker),
        }
    }

    pub fn enqueue(&self, event: &str, values: &[String]) -> Result<(), SinkError> {
        let body = WebhookBody::from_values(values)?;
        let mut q = self.shared.queue.lock().unwrap();
        let mut dropped = 0;
        while q.len() >= self.capacity {
            q.pop_front();
            dropped += 1;
        }
        q.push_back(Job {
            event: event.to_string(),
            body,
        });
        drop(q);
        {
            let mut st = self.shared.stats.lock().unwrap();
            st.queued += 1;
            st.dropped += dropped;
        }
        self.shared.ready.notify_one();
        Ok(())
    }

    pub fn stats(&self) -> DispatchStats {
        self.shared.stats.lock().unwrap().clone()
    }

    pub fn pending(&self) -> usize {
        self.shared.queue.lock().unwrap().len()
    }

    /// Waits until the queue is drained and the worker idle, or `timeout` passes.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            let st = self.stats();
            if self.pending() == 0 && st.delivered + st.failed + st.dropped >= st.queued {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for WebhookDispatcher {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        self.shared.ready.notify_all();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn worker_loop(shared: &Shared, cfg: &WebhookConfig) {
    let agent = agent(cfg.timeout);
    loop {
        let job = {
            let mut q = shared.queue.lock().unwrap();
            loop {
                if let Some(j) = q.pop_front() {
                    break j;
                }
                if shared.stop.load(Ordering::Relaxed) {
                    return;
                }
                q = shared.ready.wait_timeout(q, Duration::from_millis(100)).unwrap().0;
            }
        };
        let result = deliver(&agent, cfg, &job.event, &job.body, Some(&shared.stop));
        let mut st = shared.stats.lock().unwrap();
        match result {
            Ok(r) => {
                st.delivered += 1;
                st.last_results.push(r);
                if st.last_results.len() > 64 {
                    st.last_results.remove(0);
                }
            }
            Err(e) => {
                log::warn!("webhook {} dropped: {e}", job.event);
                st.failed += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn redaction_hides_only_a_real_key() {
        assert_eq!(redact("GET /trigger/x/with/key/abc failed", "abc"), "GET /trigger/x/with/key/<redacted> failed");
        assert_eq!(redact("connection refused", ""), "connection refused");
    }

    #[test]
    fn body_shapes() {
        let b = WebhookBody::from_values(&["0.21".into()]).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), r#"{"value1":"0.21"}"#);
        let b = WebhookBody::from_values(&["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(
            serde_json::to_string(&b).unwrap(),
            r#"{"value1":"a","value2":"b","value3":"c"}"#
        );
        assert!(matches!(
            WebhookBody::from_values(&vec!["x".to_string(); 4]),
            Err(SinkError::TooManyValues(4))
        ));
    }

    #[test]
    fn url_templates() {
        assert_eq!(
            render_url(IFTTT_TEMPLATE, "curtain_open", "k"),
            "https://maker.ifttt.com/trigger/curtain_open/with/key/k"
        );
        assert_eq!(
            template_for_base("http://127.0.0.1:9/"),
            "http://127.0.0.1:9/trigger/{event}/with/key/{key}"
        );
    }

    #[test]
    fn key_is_not_in_debug_output() {
        let cfg = WebhookConfig::new(IFTTT_TEMPLATE, "s3cret");
        assert!(!format!("{cfg:?}").contains("s3cret"));
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let mut cfg = WebhookConfig::new("http://127.0.0.1:1/trigger/{event}/{key}", "k");
        cfg.retry.delays = vec![Duration::from_millis(1), Duration::from_millis(1)];
        cfg.timeout = Duration::from_millis(500);
        match webhook_fire(&cfg, "e", &[]) {
            Err(SinkError::DeliveryFailed { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_queue_drops_oldest() {
        let mut cfg = WebhookConfig::new("http://127.0.0.1:1/{event}/{key}", "k");
        cfg.retry.delays.clear();
        cfg.timeout = Duration::from_millis(200);
        let d = WebhookDispatcher::with_capacity(cfg, 2);
        for i in 0..10 {
            d.enqueue(&format!("e{i}"), &[]).unwrap();
        }
        assert!(d.flush(Duration::from_secs(10)));
        let st = d.stats();
        assert_eq!(st.queued, 10);
        assert!(st.dropped >= 7, "{st:?}");
        assert_eq!(st.dropped + st.failed, 10);
    }
}
