//! IoT agent: device JSON messages in, broker entities out, and broker
//! commands back to the devices.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::mapping::{device_entity_id, ENTITY_PREFIX};
use crate::broker::{Attribute, BrokerError, ContextApi, Entity, NotificationBody, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Measurement,
    CommandAck,
}

/// Message sent by a device, or returned by it as a command reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviceMessage {
    pub device_id: String,
    pub kind: MessageKind,
    pub readings: BTreeMap<String, Value>,
    #[serde(default)]
    pub timestamp_us: u64,
}

impl DeviceMessage {
    pub fn measurement(device_id: &str, readings: impl IntoIterator<Item = (String, Value)>) -> Self {
        Self {
            device_id: device_id.to_owned(),
            kind: MessageKind::Measurement,
            readings: readings.into_iter().collect(),
            timestamp_us: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub device_id: String,
    /// Where commands are posted.
    pub endpoint: String,
    #[serde(default = "default_entity_type")]
    pub entity_type: String,
    #[serde(default)]
    pub commandable: Vec<String>,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
}

fn default_entity_type() -> String {
    "Device".into()
}

#[derive(Debug, Error)]
pub enum IotError {
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("measurement from {0} has no readings")]
    EmptyReadings(String),
    #[error("reading {name} from {device} is neither a number nor a boolean")]
    InvalidReading { device: String, name: String },
    #[error("attribute {attr} of {entity} is not commandable")]
    NotCommandable { entity: String, attr: String },
    #[error("device {device} unreachable after {attempts} attempts: {reason}")]
    DeviceUnreachable {
        device: String,
        attempts: u32,
        reason: String,
    },
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// Name of the attribute acknowledging a command on `attr`.
pub fn status_attribute(attr: &str) -> String {
    format!("{attr}_status")
}

/// Delivers a command body to a device endpoint and returns its reply, if any.
pub trait DeviceTransport: Send + Sync {
    fn send(&self, endpoint: &str, command: &Value) -> Result<Option<DeviceMessage>, String>;
}

/// HTTP POST of the command JSON; a non-empty 2xx body is parsed as the ack.
pub struct HttpDeviceTransport {
    agent: ureq::Agent,
}

impl HttpDeviceTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpDeviceTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(2))
    }
}

impl DeviceTransport for HttpDeviceTransport {
    fn send(&self, endpoint: &str, command: &Value) -> Result<Option<DeviceMessage>, String> {
        let mut resp = self
            .agent
            .post(endpoint)
            .header("Content-Type", "application/json")
            .send(command.to_string())
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(format!("HTTP {status}"));
        }
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if body.trim().is_empty() {
            return Ok(None);
        }
        serde_json::from_str(&body).map(Some).map_err(|e| e.to_string())
    }
}

/// Something that answers commands like a device.
pub trait SimDevice: Send {
    fn handle(&mut self, command: &Value) -> Result<DeviceMessage, String>;
}

/// Smart plug with an on/off relay in front of a fixed load.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPlug {
    pub device_id: String,
    pub load_w: f64,
    pub on: bool,
    /// When false every command fails, as if the device were offline.
    pub reachable: bool,
}

impl SimulatedPlug {
    pub fn new(device_id: &str, load_w: f64) -> Self {
        Self {
            device_id: device_id.to_owned(),
            load_w,
            on: false,
            reachable: true,
        }
    }

    pub fn power_w(&self) -> f64 {
        if self.on {
            self.load_w
        } else {
            0.0
        }
    }

    pub fn measurement(&self) -> DeviceMessage {
        DeviceMessage::measurement(
            &self.device_id,
            [
                ("on".to_owned(), json!(self.on)),
                ("power_w".to_owned(), json!(self.power_w())),
            ],
        )
    }
}

impl SimDevice for SimulatedPlug {
    fn handle(&mut self, command: &Value) -> Result<DeviceMessage, String> {
        if !self.reachable {
            return Err(format!("{} offline", self.device_id));
        }
        let set = command
            .get("set")
            .and_then(Value::as_object)
            .ok_or("command without \"set\" object")?;
        let mut ack = BTreeMap::new();
        for (k, v) in set {
            match (k.as_str(), v.as_bool()) {
                ("on", Some(b)) => {
                    self.on = b;
                    ack.insert(k.clone(), json!(b));
                }
                _ => return Err(format!("unsupported setting {k}={v}")),
            }
        }
        Ok(DeviceMessage {
            device_id: self.device_id.clone(),
            kind: MessageKind::CommandAck,
            readings: ack,
            timestamp_us: 0,
        })
    }
}

pub type SharedDevice = Arc<Mutex<dyn SimDevice>>;

/// Routes commands to in-process simulated devices by endpoint.
#[derive(Default)]
pub struct InProcessTransport {
    devices: Mutex<HashMap<String, SharedDevice>>,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach(&self, endpoint: &str, device: SharedDevice) {
        self.devices
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(endpoint.to_owned(), device);
    }
}

impl DeviceTransport for InProcessTransport {
    fn send(&self, endpoint: &str, command: &Value) -> Result<Option<DeviceMessage>, String> {
        let device = self
            .devices
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(endpoint)
            .cloned()
            .ok_or_else(|| format!("nothing listens on {endpoint}"))?;
        let reply = device.lock().unwrap_or_else(|e| e.into_inner()).handle(command);
        reply.map(Some)
    }
}

pub struct IotAgent<B: ContextApi, T: DeviceTransport> {
    devices: BTreeMap<String, DeviceConfig>,
    broker: B,
    transport: T,
    retry: RetryPolicy,
}

impl<B: ContextApi, T: DeviceTransport> IotAgent<B, T> {
    pub fn new(devices: Vec<DeviceConfig>, broker: B, transport: T) -> Self {
        Self {
            devices: devices.into_iter().map(|d| (d.device_id.clone(), d)).collect(),
            broker,
            transport,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Turns a device message into attribute updates on `urn:dev:{deviceId}`.
    /// Measurements update the readings themselves; acks update the
    /// `{name}_status` attributes.
    pub fn ingest(&self, msg: &DeviceMessage) -> Result<(), IotError> {
        let Some(dev) = self.devices.get(&msg.device_id) else {
            log::warn!("iot: dropping message from unknown device {}", msg.device_id);
            return Err(IotError::UnknownDevice(msg.device_id.clone()));
        };
        if msg.kind == MessageKind::Measurement && msg.readings.is_empty() {
            return Err(IotError::EmptyReadings(msg.device_id.clone()));
        }
        let mut attrs = BTreeMap::new();
        for (name, value) in &msg.readings {
            if !(value.is_number() || value.is_boolean()) {
                return Err(IotError::InvalidReading {
                    device: msg.device_id.clone(),
                    name: name.clone(),
                });
            }
            let (attr_name, unit) = match msg.kind {
                MessageKind::Measurement => (name.clone(), dev.units.get(name).map(String::as_str)),
                MessageKind::CommandAck => (status_attribute(name), None),
            };
            attrs.insert(attr_name, Attribute::infer(value.clone()).with_unit(unit));
        }
        if attrs.is_empty() {
            return Ok(());
        }
        let id = device_entity_id(&dev.device_id);
        match self.broker.update_attrs(&id, attrs.clone()) {
            Err(e) if e.is_not_found() => self.broker.upsert_entity(Entity {
                id,
                entity_type: dev.entity_type.clone(),
                attributes: attrs,
            })?,
            other => other?,
        }
        Ok(())
    }

    /// Sends `{"set":{attr:value}}` to the device behind `entity_id` and
    /// ingests the acknowledgement.
    pub fn command(&self, entity_id: &str, attr: &str, value: Value) -> Result<(), IotError> {
        let dev = entity_id
            .strip_prefix(ENTITY_PREFIX)
            .and_then(|d| self.devices.get(d))
            .ok_or_else(|| IotError::UnknownDevice(entity_id.to_owned()))?;
        if !dev.commandable.iter().any(|c| c == attr) {
            return Err(IotError::NotCommandable {
                entity: entity_id.to_owned(),
                attr: attr.to_owned(),
            });
        }
        let body = json!({ "set": { attr: value } });
        let mut reason = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                thread::sleep(self.retry.backoff * attempt);
            }
            match self.transport.send(&dev.endpoint, &body) {
                Ok(Some(ack)) => return self.ingest(&ack),
                Ok(None) => return Ok(()),
                Err(e) => reason = e,
            }
        }
        Err(IotError::DeviceUnreachable {
            device: dev.device_id.clone(),
            attempts: self.retry.retries + 1,
            reason,
        })
    }

    /// Forwards commandable attributes of a broker notification to devices.
    pub fn on_notification(&self, body: &NotificationBody) {
        for entity in &body.data {
            for (attr, a) in &entity.attributes {
                if let Err(e) = self.command(&entity.id, attr, a.value.clone()) {
                    log::warn!("iot: command {}.{attr} failed: {e}", entity.id);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::{Broker, DispatchMode, Router};
    use crate::clock::SimClock;

    fn toaster() -> DeviceConfig {
        DeviceConfig {
            device_id: "toaster1".into(),
            endpoint: "local://toaster1".into(),
            entity_type: "SmartPlug".into(),
            commandable: vec!["on".into()],
            units: BTreeMap::from([("power_w".into(), "W".into())]),
        }
    }

    fn setup() -> (Broker, Arc<Mutex<SimulatedPlug>>, IotAgent<Broker, InProcessTransport>) {
        let broker = Broker::in_memory(Arc::new(SimClock::new(0)), Arc::new(Router::new()), DispatchMode::Inline);
        let plug = Arc::new(Mutex::new(SimulatedPlug::new("toaster1", 700.0)));
        let transport = InProcessTransport::new();
        transport.attach("local://toaster1", plug.clone());
        let agent = IotAgent::new(vec![toaster()], broker.clone(), transport).with_retry(RetryPolicy {
            retries: 3,
            backoff: Duration::from_millis(1),
        });
        (broker, plug, agent)
    }

    #[test]
    fn measurement_becomes_attribute() {
        let (broker, _, agent) = setup();
        let msg = DeviceMessage::measurement("toaster1", [("power_w".to_owned(), json!(700))]);
        agent.ingest(&msg).unwrap();
        let e = broker.get_entity("urn:dev:toaster1").unwrap();
        assert_eq!(e.entity_type, "SmartPlug");
        let a = e.attr("power_w").unwrap();
        assert_eq!(a.value, json!(700));
        assert_eq!(a.unit.as_deref(), Some("W"));
    }

    #[test]
    fn unknown_and_empty_rejected() {
        let (broker, _, agent) = setup();
        let msg = DeviceMessage::measurement("kettle", [("power_w".to_owned(), json!(1))]);
        assert!(matches!(agent.ingest(&msg), Err(IotError::UnknownDevice(_))));
        assert!(broker.query(None).is_empty());
        let msg = DeviceMessage::measurement("toaster1", []);
        assert!(matches!(agent.ingest(&msg), Err(IotError::EmptyReadings(_))));
        assert!(broker.query(None).is_empty());
    }

    #[test]
    fn command_reaches_device_and_ack_updates_status() {
        let (broker, plug, agent) = setup();
        agent.command("urn:dev:toaster1", "on", json!(true)).unwrap();
        assert!(plug.lock().unwrap().on);
        let e = broker.get_entity("urn:dev:toaster1").unwrap();
        assert_eq!(e.attr("on_status").unwrap().value, json!(true));
        agent.command("urn:dev:toaster1", "on", json!(false)).unwrap();
        let e = broker.get_entity("urn:dev:toaster1").unwrap();
        assert_eq!(e.attr("on_status").unwrap().value, json!(false));
    }

    #[test]
    fn not_commandable() {
        let (_, _, agent) = setup();
        let err = agent.command("urn:dev:toaster1", "power_w", json!(1)).unwrap_err();
        assert!(matches!(err, IotError::NotCommandable { .. }));
    }

    #[test]
    fn offline_device_unreachable_after_retries() {
        let (_, plug, agent) = setup();
        plug.lock().unwrap().reachable = false;
        match agent.command("urn:dev:toaster1", "on", json!(true)).unwrap_err() {
            IotError::DeviceUnreachable { attempts, .. } => assert_eq!(attempts, 4),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn device_message_json_shape() {
        let m: DeviceMessage = serde_json::from_str(
            r#"{"deviceId":"toaster1","kind":"Measurement","readings":{"power_w":700},"timestampUs":5}"#,
        )
        .unwrap();
        assert_eq!(m.readings["power_w"], json!(700));
        assert_eq!(m.timestamp_us, 5);
    }
}
