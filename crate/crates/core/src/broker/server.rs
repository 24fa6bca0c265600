use std::collections::BTreeMap;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::json;
use tiny_http::{Header, Method, Response, Server};

use super::store::{Attribute, Entity, StoreError, Subscription};
use super::Broker;

pub const DEFAULT_PORT: u16 = 10280;
const WORKERS: usize = 4;

/// HTTP front end of a [`Broker`]. Dropping it stops the workers.
pub struct BrokerServer {
    addr: SocketAddr,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

#[derive(Debug, thiserror::Error)]
#[error("cannot start broker HTTP server: {0}")]
pub struct ServeError(String);

impl BrokerServer {
    pub fn start(broker: Broker, addr: impl ToSocketAddrs) -> Result<Self, ServeError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| ServeError(e.to_string()))?
            .next()
            .ok_or_else(|| ServeError("no address".into()))?;
        let server = Arc::new(Server::http(addr).map_err(|e| ServeError(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| ServeError("not an IP listener".into()))?;
        let workers = (0..WORKERS)
            .map(|_| {
                let server = server.clone();
                let broker = broker.clone();
                thread::spawn(move || {
                    for req in server.incoming_requests() {
                        handle(&broker, req);
                    }
                })
            })
            .collect();
        log::info!("context broker listening on {addr}");
        Ok(Self {
            addr,
            server,
            workers,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

type Reply = (u16, Option<String>, Vec<Header>);

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn error(status: u16, kind: &str, description: impl Into<String>) -> Reply {
    let body = json!({"error": kind, "description": description.into()}).to_string();
    (status, Some(body), vec![])
}

fn from_store(e: StoreError) -> Reply {
    match e {
        StoreError::NotFound(id) => error(404, "NotFound", format!("entity {id} not found")),
        StoreError::Invalid(msg) => error(400, "BadRequest", msg),
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| error(400, "ParseError", e.to_string()))
}

fn route(broker: &Broker, method: &Method, url: &str, body: &str) -> Reply {
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, segments.as_slice()) {
        (Method::Post, ["v2", "entities"]) => match parse::<Entity>(body) {
            Ok(e) => match broker.upsert_entity(e) {
                Ok(()) => (201, None, vec![]),
                Err(e) => from_store(e),
            },
            Err(r) => r,
        },
        (Method::Get, ["v2", "entities"]) => {
            let ty = query
                .split('&')
                .filter_map(|kv| kv.split_once('='))
                .find(|(k, _)| *k == "type")
                .map(|(_, v)| decode_component(v));
            let list = broker.query(ty.as_deref());
            (200, Some(serde_json::to_string(&list).expect("entities serialize")), vec![])
        }
        (Method::Get, ["v2", "entities", id]) => match broker.get_entity(&decode_component(id)) {
            Ok(e) => (200, Some(serde_json::to_string(&e).expect("entity serializes")), vec![]),
            Err(e) => from_store(e),
        },
        (Method::Patch, ["v2", "entities", id, "attrs"]) => {
            match parse::<BTreeMap<String, Attribute>>(body) {
                Ok(attrs) => match broker.update_attrs(&decode_component(id), attrs) {
                    Ok(()) => (204, None, vec![]),
                    Err(e) => from_store(e),
                },
                Err(r) => r,
            }
        }
        (Method::Post, ["v2", "subscriptions"]) => match parse::<Subscription>(body) {
            Ok(s) => match broker.create_subscription(s) {
                Ok(id) => {
                    let loc = Header::from_bytes("Location", format!("/v2/subscriptions/{id}"))
                        .expect("ascii header");
                    (201, Some(json!({ "id": id }).to_string()), vec![loc])
                }
                Err(e) => from_store(e),
            },
            Err(r) => r,
        },
        _ => error(404, "NotFound", format!("no route for {method} {path}")),
    }
}

/// Percent-decoding for path and query components.
fn decode_component(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(b) = u8::from_str_radix(&s[i + 1..i + 3], 16) {
                out.push(b);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn handle(broker: &Broker, mut req: tiny_http::Request) {
    let mut body = String::new();
    let reply = match req.as_reader().read_to_string(&mut body) {
        Ok(_) => route(broker, req.method(), req.url(), &body),
        Err(e) => error(400, "BadRequest", e.to_string()),
    };
    let (status, body, headers) = reply;
    let mut resp = Response::from_string(body.clone().unwrap_or_default()).with_status_code(status);
    if body.is_some() {
        resp.add_header(json_header());
    }
    for h in headers {
        resp.add_header(h);
    }
    if let Err(e) = req.respond(resp) {
        log::debug!("broker response failed: {e}");
    }
}
