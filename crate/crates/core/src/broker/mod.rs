//! Context broker: entities with typed, timestamped attributes, queries and
//! change subscriptions, served over a small NGSI-v2-style HTTP API.
//!
//! | method | path                     | effect                     |
//! |--------|--------------------------|----------------------------|
//! | POST   | /v2/entities             | create or merge an entity  |
//! | GET    | /v2/entities/{id}        | fetch one entity           |
//! | PATCH  | /v2/entities/{id}/attrs  | update attributes          |
//! | GET    | /v2/entities?type=T      | list entities of a type    |
//! | POST   | /v2/subscriptions        | subscribe to changes       |

mod client;
mod notify;
mod server;
mod store;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, Weak};
use std::thread;
use std::time::Duration;

pub use client::HttpBrokerClient;
pub use notify::{DeliveryStats, DispatchMode, HttpSink, NotifySink, RetryPolicy, Router};
pub use server::{BrokerServer, ServeError, DEFAULT_PORT};
pub use store::{
    Attribute, Entity, Notification, NotificationBody, Snapshot, Store, StoreError, Subscription,
};

use crate::clock::Clock;
use notify::Dispatcher;

/// Flush period of the persistence snapshot.
pub const FLUSH_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("broker request failed: {0}")]
    Transport(String),
    #[error("snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
}

impl BrokerError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, BrokerError::Store(StoreError::NotFound(_)))
    }
}

/// Operations shared by the in-process broker and the HTTP client.
pub trait ContextApi: Send + Sync {
    fn upsert_entity(&self, entity: Entity) -> Result<(), BrokerError>;
    fn update_attrs(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError>;
    fn get_entity(&self, id: &str) -> Result<Entity, BrokerError>;
    fn query(&self, entity_type: Option<&str>) -> Result<Vec<Entity>, BrokerError>;
    fn create_subscription(&self, sub: Subscription) -> Result<String, BrokerError>;
}

struct Persistence {
    path: PathBuf,
    dirty: AtomicBool,
}

struct Inner {
    store: Mutex<Store>,
    dispatcher: Dispatcher,
    persistence: Option<Persistence>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Err(e) = flush_inner(self) {
            log::error!("{e}");
        }
    }
}

fn flush_inner(inner: &Inner) -> Result<(), BrokerError> {
    let Some(p) = &inner.persistence else {
        return Ok(());
    };
    if !p.dirty.swap(false, Ordering::SeqCst) {
        return Ok(());
    }
    let snapshot = inner.store.lock().unwrap_or_else(|e| e.into_inner()).snapshot();
    write_snapshot(&p.path, &snapshot).map_err(|e| {
        p.dirty.store(true, Ordering::SeqCst);
        BrokerError::Snapshot {
            path: p.path.clone(),
            message: e.to_string(),
        }
    })
}

/// Temp file plus rename, so a crash never leaves a half-written snapshot.
fn write_snapshot(path: &Path, snapshot: &Snapshot) -> io::Result<()> {
    let json = serde_json::to_vec_pretty(snapshot).map_err(io::Error::other)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, path)
}

/// Cloneable handle to one broker instance.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Broker {
    pub fn in_memory(clock: Arc<dyn Clock>, sink: Arc<dyn NotifySink>, mode: DispatchMode) -> Self {
        Self::build(Store::new(clock), sink, mode, None)
    }

    /// Loads `path` when present and keeps it up to date every second.
    pub fn persistent(
        path: &Path,
        clock: Arc<dyn Clock>,
        sink: Arc<dyn NotifySink>,
        mode: DispatchMode,
    ) -> Result<Self, BrokerError> {
        let store = if path.exists() {
            let raw = fs::read(path).map_err(|e| BrokerError::Snapshot {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
            let snap: Snapshot = serde_json::from_slice(&raw).map_err(|e| BrokerError::Snapshot {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
            Store::from_snapshot(snap, clock)
        } else {
            Store::new(clock)
        };
        let broker = Self::build(
            store,
            sink,
            mode,
            Some(Persistence {
                path: path.to_owned(),
                dirty: AtomicBool::new(false),
            }),
        );
        let weak = Arc::downgrade(&broker.inner);
        thread::spawn(move || flusher(weak));
        Ok(broker)
    }

    fn build(store: Store, sink: Arc<dyn NotifySink>, mode: DispatchMode, persistence: Option<Persistence>) -> Self {
        Self {
            inner: Arc::new(Inner {
                store: Mutex::new(store),
                dispatcher: Dispatcher::new(mode, sink, RetryPolicy::default()),
                persistence,
            }),
        }
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        self.inner.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut Store) -> Result<(T, Vec<Notification>), StoreError>) -> Result<T, StoreError> {
        let (out, notes) = {
            let mut store = self.store();
            f(&mut store)?
        };
        if let Some(p) = &self.inner.persistence {
            p.dirty.store(true, Ordering::SeqCst);
        }
        // delivered outside the store lock; notifications keep commit order
        // because the dispatcher is FIFO
        self.inner.dispatcher.dispatch(notes);
        Ok(out)
    }

    pub fn upsert_entity(&self, entity: Entity) -> Result<(), StoreError> {
        self.mutate(|s| s.upsert_entity(entity).map(|n| ((), n)))
    }

    pub fn update_attrs(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), StoreError> {
        self.mutate(|s| s.update_attrs(id, attrs).map(|n| ((), n)))
    }

    pub fn get_entity(&self, id: &str) -> Result<Entity, StoreError> {
        self.store().get_entity(id).cloned()
    }

    pub fn query(&self, entity_type: Option<&str>) -> Vec<Entity> {
        self.store().query(entity_type)
    }

    pub fn create_subscription(&self, sub: Subscription) -> Result<String, StoreError> {
        self.mutate(|s| s.create_subscription(sub).map(|id| (id, Vec::new())))
    }

    pub fn snapshot(&self) -> Snapshot {
        self.store().snapshot()
    }

    /// Writes the snapshot now if anything changed.
    pub fn flush(&self) -> Result<(), BrokerError> {
        flush_inner(&self.inner)
    }

    pub fn delivery_stats(&self) -> Arc<DeliveryStats> {
        self.inner.dispatcher.stats().clone()
    }
}

fn flusher(inner: Weak<Inner>) {
    let tick = Duration::from_millis(100);
    let mut waited = Duration::ZERO;
    loop {
        thread::sleep(tick);
        waited += tick;
        let Some(inner) = inner.upgrade() else { return };
        if waited >= FLUSH_INTERVAL {
            waited = Duration::ZERO;
            if let Err(e) = flush_inner(&inner) {
                log::error!("{e}");
            }
        }
    }
}

impl ContextApi for Broker {
    fn upsert_entity(&self, entity: Entity) -> Result<(), BrokerError> {
        Ok(Broker::upsert_entity(self, entity)?)
    }
    fn update_attrs(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError> {
        Ok(Broker::update_attrs(self, id, attrs)?)
    }
    fn get_entity(&self, id: &str) -> Result<Entity, BrokerError> {
        Ok(Broker::get_entity(self, id)?)
    }
    fn query(&self, entity_type: Option<&str>) -> Result<Vec<Entity>, BrokerError> {
        Ok(Broker::query(self, entity_type))
    }
    fn create_subscription(&self, sub: Subscription) -> Result<String, BrokerError> {
        Ok(Broker::create_subscription(self, sub)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use serde_json::json;
    use std::sync::atomic::AtomicU32;

    struct Failing(AtomicU32);

    impl NotifySink for Failing {
        fn deliver(&self, _: &str, _: &NotificationBody) -> Result<(), String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err("down".into())
        }
    }

    fn sub(url: &str) -> Subscription {
        Subscription {
            id: String::new(),
            entity_id_pattern: "*".into(),
            watched_attrs: vec![],
            notify_url: url.into(),
        }
    }

    #[test]
    fn inline_router_delivers_in_order() {
        let router = Arc::new(Router::new());
        let rx = router.register("http://inproc/test");
        let b = Broker::in_memory(Arc::new(SimClock::new(0)), router, DispatchMode::Inline);
        b.create_subscription(sub("http://inproc/test")).unwrap();
        for v in 0..5 {
            b.upsert_entity(Entity::new("e", "T").with_attr("x", Attribute::infer(json!(v))))
                .unwrap();
        }
        let got: Vec<_> = rx.try_iter().map(|n| n.data[0].attributes["x"].value.clone()).collect();
        assert_eq!(got, (0..5).map(|v| json!(v)).collect::<Vec<_>>());
    }

    #[test]
    fn failed_delivery_retried_then_dropped() {
        let sink = Arc::new(Failing(AtomicU32::new(0)));
        let b = Broker::in_memory(Arc::new(SimClock::new(0)), sink.clone(), DispatchMode::Inline);
        b.create_subscription(sub("http://nowhere/")).unwrap();
        b.upsert_entity(Entity::new("e", "T").with_attr("x", Attribute::infer(json!(1))))
            .unwrap();
        assert_eq!(sink.0.load(Ordering::SeqCst), 4);
        assert_eq!(b.delivery_stats().dropped.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn snapshot_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broker.json");
        let clock: Arc<dyn Clock> = Arc::new(SimClock::new(7));
        let sink: Arc<dyn NotifySink> = Arc::new(Router::new());
        let before = {
            let b = Broker::persistent(&path, clock.clone(), sink.clone(), DispatchMode::Inline).unwrap();
            b.upsert_entity(Entity::new("a", "T").with_attr("x", Attribute::infer(json!(1.5))))
                .unwrap();
            b.upsert_entity(Entity::new("b", "U")).unwrap();
            b.flush().unwrap();
            b.snapshot()
        };
        let b = Broker::persistent(&path, clock, sink, DispatchMode::Inline).unwrap();
        assert_eq!(b.snapshot(), before);
    }
}
