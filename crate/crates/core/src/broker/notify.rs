use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::store::{Notification, NotificationBody};

/// Where notifications go.
pub trait NotifySink: Send + Sync {
    fn deliver(&self, url: &str, body: &NotificationBody) -> Result<(), String>;
}

/// Plain HTTP POST of the JSON body; any 2xx counts as delivered.
pub struct HttpSink {
    agent: ureq::Agent,
}

impl HttpSink {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpSink {
    fn default() -> Self {
        Self::new(Duration::from_secs(2))
    }
}

impl NotifySink for HttpSink {
    fn deliver(&self, url: &str, body: &NotificationBody) -> Result<(), String> {
        let json = serde_json::to_string(body).map_err(|e| e.to_string())?;
        let resp = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(json)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            Ok(())
        } else {
            Err(format!("HTTP {status}"))
        }
    }
}

/// Delivers to in-process endpoints registered by URL, everything else over
/// HTTP.
#[derive(Default)]
pub struct Router {
    local: Mutex<HashMap<String, Sender<NotificationBody>>>,
    http: HttpSink,
}

impl Router {
    pub fn new() -> Self {
        Self::default()
    }

    /// Claims `url`; notifications for it arrive on the returned channel.
    pub fn register(&self, url: &str) -> Receiver<NotificationBody> {
        let (tx, rx) = channel();
        self.local
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(url.to_owned(), tx);
        rx
    }
}

impl NotifySink for Router {
    fn deliver(&self, url: &str, body: &NotificationBody) -> Result<(), String> {
        let local = self
            .local
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(url)
            .cloned();
        match local {
            Some(tx) => tx
                .send(body.clone())
                .map_err(|_| format!("in-process endpoint {url} is gone")),
            None => self.http.deliver(url, body),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchMode {
    /// A worker thread delivers, off the request path.
    Background,
    /// Delivered before the mutating call returns; for deterministic runs.
    Inline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first failed one.
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff: Duration::from_millis(20),
        }
    }
}

#[derive(Debug, Default)]
pub struct DeliveryStats {
    pub delivered: AtomicU64,
    pub dropped: AtomicU64,
}

pub(crate) struct Dispatcher {
    mode: DispatchMode,
    sink: Arc<dyn NotifySink>,
    policy: RetryPolicy,
    stats: Arc<DeliveryStats>,
    queue: Option<Sender<Notification>>,
    worker: Option<JoinHandle<()>>,
}

fn deliver_with_retry(sink: &dyn NotifySink, n: &Notification, policy: RetryPolicy, stats: &DeliveryStats) {
    let mut last_err = String::new();
    for attempt in 0..=policy.retries {
        if attempt > 0 {
            thread::sleep(policy.backoff * attempt);
        }
        match sink.deliver(&n.url, &n.body) {
            Ok(()) => {
                stats.delivered.fetch_add(1, Ordering::Relaxed);
                return;
            }
            Err(e) => last_err = e,
        }
    }
    stats.dropped.fetch_add(1, Ordering::Relaxed);
    log::error!(
        "dropping notification for {} to {} after {} retries: {last_err}",
        n.body.subscription_id,
        n.url,
        policy.retries
    );
}

impl Dispatcher {
    pub(crate) fn new(mode: DispatchMode, sink: Arc<dyn NotifySink>, policy: RetryPolicy) -> Self {
        let stats = Arc::new(DeliveryStats::default());
        let (queue, worker) = match mode {
            DispatchMode::Inline => (None, None),
            DispatchMode::Background => {
                let (tx, rx) = channel::<Notification>();
                let sink = sink.clone();
                let stats = stats.clone();
                let worker = thread::spawn(move || {
                    // one worker keeps per-subscription order
                    for n in rx {
                        deliver_with_retry(&*sink, &n, policy, &stats);
                    }
                });
                (Some(tx), Some(worker))
            }
        };
        Self {
            mode,
            sink,
            policy,
            stats,
            queue,
            worker,
        }
    }

    pub(crate) fn stats(&self) -> &Arc<DeliveryStats> {
        &self.stats
    }

    pub(crate) fn dispatch(&self, notifications: Vec<Notification>) {
        for n in notifications {
            match (&self.mode, &self.queue) {
                (DispatchMode::Background, Some(q)) => {
                    let _ = q.send(n);
                }
                _ => deliver_with_retry(&*self.sink, &n, self.policy, &self.stats),
            }
        }
    }
}

impl Drop for Dispatcher {
    fn drop(&mut self) {
        self.queue.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
