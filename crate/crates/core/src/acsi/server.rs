use std::collections::HashSet;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::protocol::{
    decode_body, read_envelope, write_message, Message, ProtocolError, Report, ReportControl,
    ReportEntry, ReportMode, Request, Response, ResponseBody, Status, OP_SUBSCRIBE_REPORT,
};
use crate::model::{ObjectReference, SharedModel, WriteChannel};

pub const DEFAULT_PORT: u16 = 10203;

#[derive(Debug, thiserror::Error)]
#[error("cannot bind ACSI server: {0}")]
pub struct BindFailure(#[from] pub io::Error);

/// Shared write half; report threads and the request loop both write whole
/// envelopes under this lock.
type Outbox = Arc<Mutex<TcpStream>>;

struct Shared {
    model: SharedModel,
    stop: AtomicBool,
    next_report_id: AtomicU32,
    connections: Mutex<Vec<TcpStream>>,
}

/// Running server. Dropping it closes the listener and every connection.
pub struct AcsiServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl AcsiServer {
    pub fn serve(model: SharedModel, addr: impl ToSocketAddrs) -> Result<Self, BindFailure> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            model,
            stop: AtomicBool::new(false),
            next_report_id: AtomicU32::new(1),
            connections: Mutex::new(Vec::new()),
        });
        let accept = {
            let shared = shared.clone();
            thread::spawn(move || accept_loop(listener, shared))
        };
        log::info!("ACSI server listening on {addr}");
        Ok(Self {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for AcsiServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.shared.connections.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("ACSI accept: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        match stream.try_clone() {
            Ok(c) => shared.connections.lock().unwrap_or_else(|e| e.into_inner()).push(c),
            Err(e) => {
                log::warn!("ACSI connection setup: {e}");
                continue;
            }
        }
        let shared = shared.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_connection(stream, shared) {
                log::debug!("ACSI connection {peer:?} closed: {e}");
            }
        });
    }
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>) -> Result<(), ProtocolError> {
    let mut reader = stream.try_clone()?;
    let outbox: Outbox = Arc::new(Mutex::new(stream));
    let closed = Arc::new(AtomicBool::new(false));
    let result = loop {
        let body = match read_envelope(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        let request = match decode_body(&body) {
            Ok(Message::Request(r)) => r,
            Ok(_) => break Err(ProtocolError::BadOpcode(body[0])),
            Err(e) => break Err(e),
        };
        let response = handle(&shared, &request, &outbox, &closed);
        send(&outbox, &Message::Response(response))?;
    };
    // a broken socket cannot carry the error response
    if matches!(&result, Err(e) if !matches!(e, ProtocolError::Io(_))) {
        let _ = send(&outbox, &Message::ProtocolError);
    }
    closed.store(true, Ordering::SeqCst);
    let _ = outbox.lock().unwrap_or_else(|e| e.into_inner()).shutdown(Shutdown::Both);
    result
}

fn send(outbox: &Outbox, msg: &Message) -> Result<(), ProtocolError> {
    let mut s = outbox.lock().unwrap_or_else(|e| e.into_inner());
    write_message(&mut *s, msg)
}

fn handle(shared: &Arc<Shared>, request: &Request, outbox: &Outbox, closed: &Arc<AtomicBool>) -> Response {
    let model = &shared.model;
    match request {
        Request::GetDirectory { prefix } => Response::Ok(ResponseBody::Directory(model.browse(prefix))),
        Request::Read { reference } => match model.read(reference) {
            Ok((value, timestamp_us)) => Response::Ok(ResponseBody::Value {
                value,
                timestamp_us,
            }),
            Err(e) => Response::Failed {
                opcode: super::protocol::OP_READ,
                status: Status::from(&e),
            },
        },
        Request::Write { reference, value } => {
            match model.write(reference, value.clone(), WriteChannel::Controller) {
                Ok(_) => Response::Ok(ResponseBody::Written),
                Err(e) => Response::Failed {
                    opcode: super::protocol::OP_WRITE,
                    status: Status::from(&e),
                },
            }
        }
        Request::SubscribeReport(rc) => {
            let fail = |status| Response::Failed {
                opcode: OP_SUBSCRIBE_REPORT,
                status,
            };
            if !rc.is_valid() {
                return fail(Status::InvalidArgument);
            }
            let Some(ds) = model.dataset(&rc.dataset) else {
                return fail(Status::NotFound);
            };
            let report_id = shared.next_report_id.fetch_add(1, Ordering::SeqCst);
            // the watcher is registered before the response goes out so no
            // change after the subscription is missed
            let changes = model.watch();
            let task = ReportTask {
                shared: shared.clone(),
                outbox: outbox.clone(),
                closed: closed.clone(),
                control: rc.clone(),
                members: ds.members,
                report_id,
            };
            thread::spawn(move || task.run(changes));
            Response::Ok(ResponseBody::Subscribed { report_id })
        }
    }
}

struct ReportTask {
    shared: Arc<Shared>,
    outbox: Outbox,
    closed: Arc<AtomicBool>,
    control: ReportControl,
    members: Vec<ObjectReference>,
    report_id: u32,
}

impl ReportTask {
    fn alive(&self) -> bool {
        !self.closed.load(Ordering::SeqCst) && !self.shared.stop.load(Ordering::SeqCst)
    }

    fn push(&self, seq: u32) -> bool {
        let entries = match self.shared.model.snapshot(&self.control.dataset) {
            Ok(s) => s
                .into_iter()
                .map(|(reference, value, timestamp_us)| ReportEntry {
                    reference,
                    value,
                    timestamp_us,
                })
                .collect(),
            Err(e) => {
                log::error!("report {}: {e}", self.report_id);
                return false;
            }
        };
        let report = Report {
            report_id: self.report_id,
            seq,
            dataset: self.control.dataset.clone(),
            entries,
        };
        send(&self.outbox, &Message::Report(report)).is_ok()
    }

    fn run(self, changes: std::sync::mpsc::Receiver<crate::model::ModelChange>) {
        let poll = Duration::from_millis(50);
        let mut seq = 0u32;
        match self.control.mode {
            ReportMode::OnChange => {
                let members: HashSet<&ObjectReference> = self.members.iter().collect();
                while self.alive() {
                    match changes.recv_timeout(poll) {
                        Ok(c) if c.value_changed && members.contains(&c.reference) => {
                            seq += 1;
                            if !self.push(seq) {
                                break;
                            }
                        }
                        Ok(_) | Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            }
            ReportMode::Periodic { period_ms } => {
                drop(changes);
                let period = Duration::from_millis(u64::from(period_ms));
                let mut next = Instant::now() + period;
                while self.alive() {
                    let now = Instant::now();
                    if now < next {
                        thread::sleep((next - now).min(poll));
                        continue;
                    }
                    seq += 1;
                    if !self.push(seq) {
                        break;
                    }
                    next += period;
                }
            }
        }
    }
}
