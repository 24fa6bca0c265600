//! Protocol bridges around the context broker: the device-model agent
//! ([`I61850Agent`]) and the IoT agent ([`IotAgent`]), plus small HTTP
//! endpoints used when they run over the network.

mod i61850;
mod iot;
pub mod mapping;

use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;
use tiny_http::{Response, Server};

pub use i61850::{BridgeCounters, BridgeTasks, I61850Agent, LAST_ERROR_ATTR};
pub use iot::{
    status_attribute, DeviceConfig, DeviceMessage, DeviceTransport, HttpDeviceTransport,
    InProcessTransport, IotAgent, IotError, MessageKind, SharedDevice, SimDevice, SimulatedPlug,
};
pub use mapping::{BridgeMapping, MappingError};

use crate::acsi::AcsiError;
use crate::broker::{BrokerError, NotificationBody};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("acsi access to {path} failed: {source}")]
    Acsi {
        path: String,
        #[source]
        source: AcsiError,
    },
    #[error("value {value} does not fit {path}")]
    BadValue { path: String, value: String },
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("cannot listen: {0}")]
    Listen(String),
}

const ACCEPT_POLL: Duration = Duration::from_millis(50);

/// Single-threaded HTTP endpoint; `handler` maps a request body to a status
/// and reply body.
struct Endpoint {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Endpoint {
    fn start(
        addr: impl ToSocketAddrs,
        mut handler: impl FnMut(&str) -> (u16, String) + Send + 'static,
    ) -> Result<Self, BridgeError> {
        let server = Server::http(addr).map_err(|e| BridgeError::Listen(e.to_string()))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| BridgeError::Listen("not an IP socket".into()))?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                let mut req = match server.recv_timeout(ACCEPT_POLL) {
                    Ok(Some(r)) => r,
                    Ok(None) => continue,
                    Err(e) => {
                        log::error!("endpoint {local}: {e}");
                        break;
                    }
                };
                let mut body = String::new();
                let (status, reply) = match req.as_reader().read_to_string(&mut body) {
                    Ok(_) => handler(&body),
                    Err(e) => (400, e.to_string()),
                };
                let _ = req.respond(Response::from_string(reply).with_status_code(status));
            }
        });
        Ok(Self {
            addr: local,
            stop,
            thread: Some(thread),
        })
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Receives broker notifications over HTTP and queues them in arrival order.
pub struct NotificationListener {
    endpoint: Endpoint,
}

impl NotificationListener {
    pub fn start(addr: impl ToSocketAddrs) -> Result<(Self, Receiver<NotificationBody>), BridgeError> {
        let (tx, rx) = channel();
        let endpoint = Endpoint::start(addr, move |body| {
            match serde_json::from_str::<NotificationBody>(body) {
                Ok(n) => {
                    let _ = tx.send(n);
                    (204, String::new())
                }
                Err(e) => (400, e.to_string()),
            }
        })?;
        Ok((Self { endpoint }, rx))
    }

    pub fn url(&self) -> String {
        format!("http://{}/notify", self.endpoint.addr)
    }
}

/// Exposes a simulated device at an HTTP endpoint; replies carry the ack.
pub struct DeviceServer {
    endpoint: Endpoint,
}

impl DeviceServer {
    pub fn start(device: SharedDevice, addr: impl ToSocketAddrs) -> Result<Self, BridgeError> {
        let endpoint = Endpoint::start(addr, move |body| {
            let cmd: serde_json::Value = match serde_json::from_str(body) {
                Ok(v) => v,
                Err(e) => return (400, e.to_string()),
            };
            let reply = device.lock().unwrap_or_else(|e| e.into_inner()).handle(&cmd);
            match reply.and_then(|ack| serde_json::to_string(&ack).map_err(|e| e.to_string())) {
                Ok(json) => (200, json),
                Err(e) => (503, e),
            }
        })?;
        Ok(Self { endpoint })
    }

    pub fn url(&self) -> String {
        format!("http://{}/cmd", self.endpoint.addr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::{Broker, DispatchMode, HttpSink, NotifySink, RetryPolicy};
    use crate::clock::SimClock;
    use serde_json::json;
    use std::collections::BTreeMap;
    use std::sync::Mutex;

    #[test]
    fn http_device_round_trip() {
        let plug = Arc::new(Mutex::new(SimulatedPlug::new("toaster1", 700.0)));
        let server = DeviceServer::start(plug.clone(), "127.0.0.1:0").unwrap();
        let broker = Broker::in_memory(
            Arc::new(SimClock::new(0)),
            Arc::new(HttpSink::default()),
            DispatchMode::Inline,
        );
        let cfg = DeviceConfig {
            device_id: "toaster1".into(),
            endpoint: server.url(),
            entity_type: "SmartPlug".into(),
            commandable: vec!["on".into()],
            units: BTreeMap::new(),
        };
        let agent = IotAgent::new(vec![cfg], broker.clone(), HttpDeviceTransport::default());
        agent.command("urn:dev:toaster1", "on", json!(true)).unwrap();
        assert!(plug.lock().unwrap().on);
        let e = broker.get_entity("urn:dev:toaster1").unwrap();
        assert_eq!(e.attr("on_status").unwrap().value, json!(true));

        plug.lock().unwrap().reachable = false;
        let agent = agent.with_retry(RetryPolicy { retries: 3, backoff: Duration::from_millis(1) });
        assert!(matches!(
            agent.command("urn:dev:toaster1", "on", json!(false)),
            Err(IotError::DeviceUnreachable { attempts: 4, .. })
        ));
    }

    #[test]
    fn listener_queues_notifications() {
        let (listener, rx) = NotificationListener::start("127.0.0.1:0").unwrap();
        let body = NotificationBody { subscription_id: "sub-1".into(), data: vec![] };
        HttpSink::default().deliver(&listener.url(), &body).unwrap();
        assert_eq!(rx.recv_timeout(Duration::from_secs(2)).unwrap(), body);
    }
}
