//! Bridge between the device model (over ACSI) and the context broker.
//!
//! Model values flow to the broker from reports; command attributes
//! (`_setMag`, `_ctlVal`) flow from broker notifications to ACSI writes.
//! The two directions use disjoint attribute names, so nothing echoes.

use std::collections::BTreeMap;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::json;

use super::mapping::{self, BridgeMapping};
use super::BridgeError;
use crate::acsi::{AcsiClient, Report};
use crate::broker::{Attribute, ContextApi, Entity, NotificationBody, Subscription};
use crate::model::{DataValue, ObjectReference, ValueKind};

/// Attribute set on an entity when a command could not be applied.
pub const LAST_ERROR_ATTR: &str = "lastError";

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct BridgeCounters {
    pub attrs_forwarded: u64,
    pub commands_written: u64,
    pub commands_failed: u64,
}

pub struct I61850Agent<C: AcsiClient, B: ContextApi> {
    client: C,
    broker: B,
    mapping: BridgeMapping,
    kinds: BTreeMap<ObjectReference, ValueKind>,
    counters: BridgeCounters,
}

impl<C: AcsiClient, B: ContextApi> I61850Agent<C, B> {
    pub fn new(client: C, broker: B, mapping: BridgeMapping) -> Self {
        Self {
            client,
            broker,
            mapping,
            kinds: BTreeMap::new(),
            counters: BridgeCounters::default(),
        }
    }

    pub fn mapping(&self) -> &BridgeMapping {
        &self.mapping
    }

    pub fn counters(&self) -> BridgeCounters {
        self.counters
    }

    pub fn broker(&self) -> &B {
        &self.broker
    }

    /// Reads every mapped path once and creates the entities. Also learns the
    /// value kind of each path, needed to convert incoming commands.
    pub fn initial_sync(&mut self) -> Result<(), BridgeError> {
        let mut entities: BTreeMap<String, Entity> = BTreeMap::new();
        let paths: Vec<ObjectReference> = self.mapping.paths().cloned().collect();
        for path in paths {
            let (value, _) = self
                .client
                .read(&path)
                .map_err(|source| BridgeError::Acsi { path: path.to_string(), source })?;
            self.kinds.insert(path.clone(), value.kind());
            let (id, attr) = self.mapping.to_entity(&path).expect("path from mapping");
            entities
                .entry(id.to_owned())
                .or_insert_with(|| Entity::new(id, &mapping::entity_type(&path)))
                .attributes
                .insert(attr.to_owned(), mapping::to_attribute(&value));
        }
        for entity in entities.into_values() {
            self.broker.upsert_entity(entity)?;
        }
        Ok(())
    }

    /// Subscribes `notify_url` to every command attribute of the mapped entities.
    pub fn subscribe_commands(&self, notify_url: &str) -> Result<String, BridgeError> {
        let sub = Subscription {
            id: String::new(),
            entity_id_pattern: format!("{}*", mapping::ENTITY_PREFIX),
            watched_attrs: self
                .mapping
                .command_attributes()
                .into_iter()
                .map(str::to_owned)
                .collect(),
            notify_url: notify_url.to_owned(),
        };
        Ok(self.broker.create_subscription(sub)?)
    }

    /// Paths that should be reported to this bridge: everything except commands.
    pub fn report_paths(&self) -> Vec<ObjectReference> {
        self.mapping
            .paths()
            .filter(|p| !mapping::is_command_attribute(&mapping::attribute_name(p)))
            .cloned()
            .collect()
    }

    /// Forwards report entries to the broker, one update per entity.
    pub fn on_report(&mut self, report: &Report) {
        let changes = report
            .entries
            .iter()
            .map(|e| (&e.reference, &e.value));
        self.forward(changes);
    }

    /// Forwards model values to the broker. Command paths and unmapped paths
    /// are ignored.
    pub fn forward<'a>(&mut self, changes: impl IntoIterator<Item = (&'a ObjectReference, &'a DataValue)>) {
        let mut per_entity: BTreeMap<String, BTreeMap<String, Attribute>> = BTreeMap::new();
        let mut types = BTreeMap::new();
        for (path, value) in changes {
            let Some((id, attr)) = self.mapping.to_entity(path) else {
                continue;
            };
            if mapping::is_command_attribute(attr) {
                continue;
            }
            types.entry(id.to_owned()).or_insert_with(|| mapping::entity_type(path));
            per_entity
                .entry(id.to_owned())
                .or_default()
                .insert(attr.to_owned(), mapping::to_attribute(value));
        }
        for (id, attrs) in per_entity {
            let n = attrs.len() as u64;
            let result = match self.broker.update_attrs(&id, attrs.clone()) {
                Err(e) if e.is_not_found() => {
                    let entity = Entity {
                        id: id.clone(),
                        entity_type: types[&id].clone(),
                        attributes: attrs,
                    };
                    self.broker.upsert_entity(entity)
                }
                other => other,
            };
            match result {
                Ok(()) => self.counters.attrs_forwarded += n,
                Err(e) => log::warn!("bridge: update of {id} failed: {e}"),
            }
        }
    }

    /// Applies command attributes from a broker notification as ACSI writes.
    /// Failures are logged and recorded on the entity; the bridge carries on.
    pub fn on_notification(&mut self, body: &NotificationBody) {
        for entity in &body.data {
            for (attr, value) in &entity.attributes {
                if !mapping::is_command_attribute(attr) {
                    continue;
                }
                let Some(path) = self.mapping.to_path(&entity.id, attr).cloned() else {
                    log::warn!("bridge: no model path for {}.{attr}", entity.id);
                    continue;
                };
                if let Err(e) = self.write_command(&path, &value.value) {
                    self.counters.commands_failed += 1;
                    log::warn!("bridge: command {}.{attr} failed: {e}", entity.id);
                    let note = Attribute::new(json!(format!("{attr}: {e}")), "Text");
                    let attrs = BTreeMap::from([(LAST_ERROR_ATTR.to_owned(), note)]);
                    if let Err(e) = self.broker.update_attrs(&entity.id, attrs) {
                        log::warn!("bridge: cannot annotate {}: {e}", entity.id);
                    }
                } else {
                    self.counters.commands_written += 1;
                }
            }
        }
    }

    fn write_command(&mut self, path: &ObjectReference, value: &serde_json::Value) -> Result<(), BridgeError> {
        let kind = match self.kinds.get(path) {
            Some(k) => *k,
            None => {
                let (v, _) = self
                    .client
                    .read(path)
                    .map_err(|source| BridgeError::Acsi { path: path.to_string(), source })?;
                self.kinds.insert(path.clone(), v.kind());
                v.kind()
            }
        };
        let dv = mapping::to_data_value(value, kind).ok_or_else(|| BridgeError::BadValue {
            path: path.to_string(),
            value: value.to_string(),
        })?;
        self.client
            .write(path, dv)
            .map_err(|source| BridgeError::Acsi { path: path.to_string(), source })
    }
}

/// Threads feeding a shared agent from a report stream and a notification
/// stream. Each stream is handled in order by its own thread.
pub struct BridgeTasks {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

const POLL: Duration = Duration::from_millis(50);

impl BridgeTasks {
    pub fn spawn<C, B>(
        agent: Arc<Mutex<I61850Agent<C, B>>>,
        reports: Receiver<Report>,
        notifications: Receiver<NotificationBody>,
    ) -> Self
    where
        C: AcsiClient + 'static,
        B: ContextApi + 'static,
    {
        let stop = Arc::new(AtomicBool::new(false));
        let (a1, s1) = (agent.clone(), stop.clone());
        let t1 = thread::spawn(move || {
            pump(&reports, &s1, |r| {
                a1.lock().unwrap_or_else(|e| e.into_inner()).on_report(&r)
            })
        });
        let (a2, s2) = (agent, stop.clone());
        let t2 = thread::spawn(move || {
            pump(&notifications, &s2, |n| {
                a2.lock().unwrap_or_else(|e| e.into_inner()).on_notification(&n)
            })
        });
        Self { stop, threads: vec![t1, t2] }
    }
}

fn pump<T>(rx: &Receiver<T>, stop: &AtomicBool, mut f: impl FnMut(T)) {
    while !stop.load(Ordering::Relaxed) {
        match rx.recv_timeout(POLL) {
            Ok(item) => f(item),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
}

impl Drop for BridgeTasks {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acsi::{LocalAcsiClient, ReportEntry};
    use crate::broker::{Broker, DispatchMode, Router};
    use crate::clock::SimClock;
    use crate::model::{build_home_model, paths, SharedModel};
    use crate::plant::PlantConfig;

    struct Fixture {
        model: SharedModel,
        broker: Broker,
        notes: Receiver<NotificationBody>,
        agent: I61850Agent<LocalAcsiClient, Broker>,
    }

    fn fixture() -> Fixture {
        let model = SharedModel::new(build_home_model(&PlantConfig::default()).unwrap());
        let router = Arc::new(Router::new());
        let notes = router.register("http://bridge.local/notify");
        let broker = Broker::in_memory(Arc::new(SimClock::new(0)), router, DispatchMode::Inline);
        let mapping = BridgeMapping::new(model.lock().references()).unwrap();
        let mut agent = I61850Agent::new(LocalAcsiClient::new(model.clone()), broker.clone(), mapping);
        agent.initial_sync().unwrap();
        agent.subscribe_commands("http://bridge.local/notify").unwrap();
        Fixture { model, broker, notes, agent }
    }

    fn set_cmd(f: &mut Fixture, id: &str, attr: &str, value: serde_json::Value) {
        let attrs = BTreeMap::from([(attr.to_owned(), Attribute::infer(value))]);
        f.broker.update_attrs(id, attrs).unwrap();
        while let Ok(n) = f.notes.try_recv() {
            f.agent.on_notification(&n);
        }
    }

    #[test]
    fn initial_sync_creates_entities() {
        let f = fixture();
        let bat = f.broker.get_entity("urn:dev:BAT1-ZBAT1").unwrap();
        assert_eq!(bat.entity_type, "ZBAT");
        assert_eq!(bat.attr("MaxWCha_setMag").unwrap().value, json!(1800.0));
        assert_eq!(f.broker.query(None).len(), 9);
    }

    #[test]
    fn report_updates_entity() {
        let mut f = fixture();
        let soc: ObjectReference = paths::BAT_SOC_PCT.parse().unwrap();
        f.agent.on_report(&Report {
            report_id: 1,
            seq: 1,
            dataset: "ds".into(),
            entries: vec![ReportEntry { reference: soc, value: DataValue::Float32(72.5), timestamp_us: 5 }],
        });
        let bat = f.broker.get_entity("urn:dev:BAT1-ZBAT1").unwrap();
        assert_eq!(bat.attr("SocPct_mag").unwrap().value, json!(72.5));
        // no command was generated by the forwarded value
        assert!(f.notes.try_recv().is_err());
    }

    #[test]
    fn broker_command_writes_model() {
        let mut f = fixture();
        set_cmd(&mut f, "urn:dev:BAT1-ZBTC1", "WSpt_setMag", json!(-500.0));
        let sp: ObjectReference = paths::BAT_SETPOINT.parse().unwrap();
        assert_eq!(f.model.read(&sp).unwrap().0, DataValue::Float32(-500.0));
        assert_eq!(f.agent.counters().commands_written, 1);
    }

    #[test]
    fn access_denied_is_annotated() {
        let mut f = fixture();
        // configuration attributes look like commands but refuse controller writes
        set_cmd(&mut f, "urn:dev:BAT1-ZBAT1", "MaxWCha_setMag", json!(100.0));
        let bat = f.broker.get_entity("urn:dev:BAT1-ZBAT1").unwrap();
        let err = bat.attr(LAST_ERROR_ATTR).unwrap().value.as_str().unwrap().to_owned();
        assert!(err.contains("MaxWCha_setMag"), "{err}");
        assert_eq!(f.agent.counters().commands_failed, 1);
        // still working afterwards
        set_cmd(&mut f, "urn:dev:LOAD1-MMXU2", "SwSt_ctlVal", json!(true));
        let sw: ObjectReference = paths::switch_command(0).parse().unwrap();
        assert_eq!(f.model.read(&sw).unwrap().0, DataValue::Bool(true));
    }

    #[test]
    fn wrong_json_type_is_reported() {
        let mut f = fixture();
        set_cmd(&mut f, "urn:dev:LOAD1-MMXU2", "SwSt_ctlVal", json!("on"));
        assert_eq!(f.agent.counters().commands_failed, 1);
    }
}
