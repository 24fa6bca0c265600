use std::io;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use super::protocol::{
    decode_body, read_envelope, write_message, Message, ProtocolError, Report, ReportControl,
    Request, Response, ResponseBody, Status,
};
use crate::model::{DataValue, ModelError, ObjectReference, SharedModel, WriteChannel};

#[derive(Debug, Error)]
pub enum AcsiError {
    #[error("server returned status {0:?}")]
    Status(Status),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    Closed,
    #[error("unexpected response {0:?}")]
    Unexpected(Box<Response>),
}

impl AcsiError {
    pub fn status(&self) -> Option<Status> {
        match self {
            AcsiError::Status(s) => Some(*s),
            _ => None,
        }
    }
}

impl From<ModelError> for AcsiError {
    fn from(e: ModelError) -> Self {
        AcsiError::Status(Status::from(&e))
    }
}

/// Controller-side view of a server model: the only way the HEMS and the
/// bridges touch setpoints.
pub trait AcsiClient: Send {
    fn browse(&mut self, prefix: &str) -> Result<Vec<ObjectReference>, AcsiError>;
    fn read(&mut self, reference: &ObjectReference) -> Result<(DataValue, u64), AcsiError>;
    fn write(&mut self, reference: &ObjectReference, value: DataValue) -> Result<(), AcsiError>;
}

impl<C: AcsiClient + ?Sized> AcsiClient for Box<C> {
    fn browse(&mut self, prefix: &str) -> Result<Vec<ObjectReference>, AcsiError> {
        (**self).browse(prefix)
    }
    fn read(&mut self, reference: &ObjectReference) -> Result<(DataValue, u64), AcsiError> {
        (**self).read(reference)
    }
    fn write(&mut self, reference: &ObjectReference, value: DataValue) -> Result<(), AcsiError> {
        (**self).write(reference, value)
    }
}

/// Same semantics as the network client without a socket; used for
/// deterministic runs.
#[derive(Clone)]
pub struct LocalAcsiClient {
    model: SharedModel,
}

impl LocalAcsiClient {
    pub fn new(model: SharedModel) -> Self {
        Self { model }
    }
}

impl AcsiClient for LocalAcsiClient {
    fn browse(&mut self, prefix: &str) -> Result<Vec<ObjectReference>, AcsiError> {
        Ok(self.model.browse(prefix))
    }

    fn read(&mut self, reference: &ObjectReference) -> Result<(DataValue, u64), AcsiError> {
        Ok(self.model.read(reference)?)
    }

    fn write(&mut self, reference: &ObjectReference, value: DataValue) -> Result<(), AcsiError> {
        self.model.write(reference, value, WriteChannel::Controller)?;
        Ok(())
    }
}

/// TCP client. A background thread splits incoming envelopes into responses
/// and report pushes.
pub struct TcpAcsiClient {
    stream: TcpStream,
    responses: Receiver<Result<Message, ProtocolError>>,
    reports: Option<Receiver<Report>>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
}

impl TcpAcsiClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, AcsiError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut read_half = stream.try_clone()?;
        let (resp_tx, responses) = channel();
        let (report_tx, reports) = channel();
        let reader = thread::spawn(move || reader_loop(&mut read_half, resp_tx, report_tx));
        Ok(Self {
            stream,
            responses,
            reports: Some(reports),
            reader: Some(reader),
            timeout: Duration::from_secs(5),
        })
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Report pushes of every subscription on this connection. Can be taken once.
    pub fn take_reports(&mut self) -> Option<Receiver<Report>> {
        self.reports.take()
    }

    fn call(&mut self, request: Request) -> Result<ResponseBody, AcsiError> {
        write_message(&mut self.stream, &Message::Request(request))?;
        let msg = match self.responses.recv_timeout(self.timeout) {
            Ok(m) => m?,
            Err(RecvTimeoutError::Timeout) => return Err(AcsiError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(AcsiError::Closed),
        };
        match msg {
            Message::Response(Response::Ok(body)) => Ok(body),
            Message::Response(Response::Failed { status, .. }) => Err(AcsiError::Status(status)),
            Message::ProtocolError => Err(AcsiError::Status(Status::ProtocolError)),
            _ => Err(AcsiError::Closed),
        }
    }

    pub fn subscribe_report(&mut self, control: ReportControl) -> Result<u32, AcsiError> {
        match self.call(Request::SubscribeReport(control))? {
            ResponseBody::Subscribed { report_id } => Ok(report_id),
            other => Err(AcsiError::Unexpected(Box::new(Response::Ok(other)))),
        }
    }
}

fn reader_loop(
    stream: &mut TcpStream,
    responses: Sender<Result<Message, ProtocolError>>,
    reports: Sender<Report>,
) {
    loop {
        let body = match read_envelope(stream) {
            Ok(Some(b)) => b,
            Ok(None) => return,
            Err(e) => {
                let _ = responses.send(Err(e));
                return;
            }
        };
        match decode_body(&body) {
            Ok(Message::Report(r)) => {
                // nobody listening is fine; responses still flow
                let _ = reports.send(r);
            }
            Ok(m) => {
                let end = matches!(m, Message::ProtocolError);
                if responses.send(Ok(m)).is_err() || end {
                    return;
                }
            }
            Err(e) => {
                let _ = responses.send(Err(e));
                return;
            }
        }
    }
}

impl Drop for TcpAcsiClient {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

impl AcsiClient for TcpAcsiClient {
    fn browse(&mut self, prefix: &str) -> Result<Vec<ObjectReference>, AcsiError> {
        match self.call(Request::GetDirectory {
            prefix: prefix.to_owned(),
        })? {
            ResponseBody::Directory(refs) => Ok(refs),
            other => Err(AcsiError::Unexpected(Box::new(Response::Ok(other)))),
        }
    }

    fn read(&mut self, reference: &ObjectReference) -> Result<(DataValue, u64), AcsiError> {
        match self.call(Request::Read {
            reference: reference.clone(),
        })? {
            ResponseBody::Value {
                value,
                timestamp_us,
            } => Ok((value, timestamp_us)),
            other => Err(AcsiError::Unexpected(Box::new(Response::Ok(other)))),
        }
    }

    fn write(&mut self, reference: &ObjectReference, value: DataValue) -> Result<(), AcsiError> {
        match self.call(Request::Write {
            reference: reference.clone(),
            value,
        })? {
            ResponseBody::Written => Ok(()),
            other => Err(AcsiError::Unexpected(Box::new(Response::Ok(other)))),
        }
    }
}
