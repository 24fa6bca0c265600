//! Wire format. Every message is an envelope
//!
//! ```text
//! length u32 (bytes that follow) | opcode u8 | payload
//! ```
//!
//! Responses carry `request opcode | 0x80` and start with a status byte.
//! Report pushes use opcode 0x90 and are never answered.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::model::{DataValue, ModelError, ObjectReference};
use crate::tlv::{put_count, put_text, put_value, DecodeError, EncodeError, Reader};

pub const OP_GET_DIRECTORY: u8 = 0x01;
pub const OP_READ: u8 = 0x02;
pub const OP_WRITE: u8 = 0x03;
pub const OP_SUBSCRIBE_REPORT: u8 = 0x04;
pub const RESPONSE_BIT: u8 = 0x80;
pub const OP_REPORT: u8 = 0x90;
/// Response opcode for requests that could not be parsed. The server closes
/// the connection after sending it.
pub const OP_PROTOCOL_ERROR: u8 = 0xFF;

/// Largest accepted envelope body.
pub const MAX_ENVELOPE: u32 = 1 << 20;
pub const MIN_PERIOD_MS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    TypeMismatch = 2,
    AccessDenied = 3,
    ProtocolError = 4,
    InvalidArgument = 5,
}

impl Status {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Status::Ok,
            1 => Status::NotFound,
            2 => Status::TypeMismatch,
            3 => Status::AccessDenied,
            4 => Status::ProtocolError,
            5 => Status::InvalidArgument,
            _ => return None,
        })
    }
}

impl From<&ModelError> for Status {
    fn from(e: &ModelError) -> Self {
        match e {
            ModelError::NotFound(_) => Status::NotFound,
            ModelError::TypeMismatch { .. } => Status::TypeMismatch,
            ModelError::AccessDenied { .. } => Status::AccessDenied,
            ModelError::EmptyDataSet(_) | ModelError::DuplicateDataSet(_) => Status::InvalidArgument,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMode {
    OnChange,
    Periodic { period_ms: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportControl {
    pub dataset: String,
    pub mode: ReportMode,
}

impl ReportControl {
    pub fn is_valid(&self) -> bool {
        match self.mode {
            ReportMode::OnChange => true,
            ReportMode::Periodic { period_ms } => period_ms >= MIN_PERIOD_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    GetDirectory { prefix: String },
    Read { reference: ObjectReference },
    Write { reference: ObjectReference, value: DataValue },
    SubscribeReport(ReportControl),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseBody {
    Directory(Vec<ObjectReference>),
    Value { value: DataValue, timestamp_us: u64 },
    Written,
    Subscribed { report_id: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok(ResponseBody),
    /// Non-OK status for the request with the given opcode.
    Failed { opcode: u8, status: Status },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub reference: ObjectReference,
    pub value: DataValue,
    pub timestamp_us: u64,
}

/// Unsolicited data set snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub report_id: u32,
    /// Per-subscription counter starting at 1.
    pub seq: u32,
    pub dataset: String,
    pub entries: Vec<ReportEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(Request),
    Response(Response),
    Report(Report),
    ProtocolError,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("envelope length {0} out of range")]
    BadLength(u32),
    #[error("unknown opcode 0x{0:02x}")]
    BadOpcode(u8),
    #[error("unknown status byte {0}")]
    BadStatus(u8),
    #[error("unknown report mode {0}")]
    BadMode(u8),
    #[error("{0} unread bytes after payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

fn put_reference(out: &mut Vec<u8>, r: &ObjectReference) -> Result<(), EncodeError> {
    put_text(out, &r.to_string())
}

fn opcode_of(request: &Request) -> u8 {
    match request {
        Request::GetDirectory { .. } => OP_GET_DIRECTORY,
        Request::Read { .. } => OP_READ,
        Request::Write { .. } => OP_WRITE,
        Request::SubscribeReport(_) => OP_SUBSCRIBE_REPORT,
    }
}

fn body_opcode(body: &ResponseBody) -> u8 {
    match body {
        ResponseBody::Directory(_) => OP_GET_DIRECTORY,
        ResponseBody::Value { .. } => OP_READ,
        ResponseBody::Written => OP_WRITE,
        ResponseBody::Subscribed { .. } => OP_SUBSCRIBE_REPORT,
    }
}

/// Serializes a message into one complete envelope.
pub fn encode(message: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut p = vec![0, 0, 0, 0];
    match message {
        Message::Request(req) => {
            p.push(opcode_of(req));
            match req {
                Request::GetDirectory { prefix } => put_text(&mut p, prefix)?,
                Request::Read { reference } => put_reference(&mut p, reference)?,
                Request::Write { reference, value } => {
                    put_reference(&mut p, reference)?;
                    put_value(&mut p, value)?;
                }
                Request::SubscribeReport(rc) => {
                    put_text(&mut p, &rc.dataset)?;
                    match rc.mode {
                        ReportMode::OnChange => p.push(0),
                        ReportMode::Periodic { period_ms } => {
                            p.push(1);
                            p.extend_from_slice(&period_ms.to_be_bytes());
                        }
                    }
                }
            }
        }
        Message::Response(Response::Failed { opcode, status }) => {
            p.push(opcode | RESPONSE_BIT);
            p.push(*status as u8);
        }
        Message::Response(Response::Ok(body)) => {
            p.push(body_opcode(body) | RESPONSE_BIT);
            p.push(Status::Ok as u8);
            match body {
                ResponseBody::Directory(refs) => {
                    put_count(&mut p, refs.len())?;
                    for r in refs {
                        put_reference(&mut p, r)?;
                    }
                }
                ResponseBody::Value {
                    value,
                    timestamp_us,
                } => {
                    put_value(&mut p, value)?;
                    p.extend_from_slice(&timestamp_us.to_be_bytes());
                }
                ResponseBody::Written => {}
                ResponseBody::Subscribed { report_id } => {
                    p.extend_from_slice(&report_id.to_be_bytes())
                }
            }
        }
        Message::Report(r) => {
            p.push(OP_REPORT);
            p.extend_from_slice(&r.report_id.to_be_bytes());
            p.extend_from_slice(&r.seq.to_be_bytes());
            put_text(&mut p, &r.dataset)?;
            put_count(&mut p, r.entries.len())?;
            for e in &r.entries {
                put_reference(&mut p, &e.reference)?;
                put_value(&mut p, &e.value)?;
                p.extend_from_slice(&e.timestamp_us.to_be_bytes());
            }
        }
        Message::ProtocolError => {
            p.push(OP_PROTOCOL_ERROR);
            p.push(Status::ProtocolError as u8);
        }
    }
    let len = (p.len() - 4) as u32;
    if len > MAX_ENVELOPE {
        return Err(ProtocolError::BadLength(len));
    }
    p[..4].copy_from_slice(&len.to_be_bytes());
    Ok(p)
}

/// Parses the body of one envelope (opcode and payload, without the length).
pub fn decode_body(body: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = Reader::new(body);
    let opcode = r.u8()?;
    let msg = match opcode {
        OP_GET_DIRECTORY => Message::Request(Request::GetDirectory { prefix: r.text()? }),
        OP_READ => Message::Request(Request::Read {
            reference: r.reference()?,
        }),
        OP_WRITE => Message::Request(Request::Write {
            reference: r.reference()?,
            value: r.value()?,
        }),
        OP_SUBSCRIBE_REPORT => {
            let dataset = r.text()?;
            let mode = match r.u8()? {
                0 => ReportMode::OnChange,
                1 => ReportMode::Periodic {
                    period_ms: r.u32()?,
                },
                m => return Err(ProtocolError::BadMode(m)),
            };
            Message::Request(Request::SubscribeReport(ReportControl { dataset, mode }))
        }
        OP_REPORT => {
            let report_id = r.u32()?;
            let seq = r.u32()?;
            let dataset = r.text()?;
            let n = r.u16()?;
            let mut entries = Vec::with_capacity(n as usize);
            for _ in 0..n {
                entries.push(ReportEntry {
                    reference: r.reference()?,
                    value: r.value()?,
                    timestamp_us: r.u64()?,
                });
            }
            Message::Report(Report {
                report_id,
                seq,
                dataset,
                entries,
            })
        }
        OP_PROTOCOL_ERROR => {
            r.u8()?;
            Message::ProtocolError
        }
        op if op & RESPONSE_BIT != 0 => {
            let base = op & !RESPONSE_BIT;
            let status_byte = r.u8()?;
            let status = Status::from_byte(status_byte).ok_or(ProtocolError::BadStatus(status_byte))?;
            if status != Status::Ok {
                Message::Response(Response::Failed { opcode: base, status })
            } else {
                let body = match base {
                    OP_GET_DIRECTORY => {
                        let n = r.u16()?;
                        let mut refs = Vec::with_capacity(n as usize);
                        for _ in 0..n {
                            refs.push(r.reference()?);
                        }
                        ResponseBody::Directory(refs)
                    }
                    OP_READ => ResponseBody::Value {
                        value: r.value()?,
                        timestamp_us: r.u64()?,
                    },
                    OP_WRITE => ResponseBody::Written,
                    OP_SUBSCRIBE_REPORT => ResponseBody::Subscribed {
                        report_id: r.u32()?,
                    },
                    _ => return Err(ProtocolError::BadOpcode(op)),
                };
                Message::Response(Response::Ok(body))
            }
        }
        op => return Err(ProtocolError::BadOpcode(op)),
    };
    if r.remaining() != 0 {
        return Err(ProtocolError::TrailingBytes(r.remaining()));
    }
    Ok(msg)
}

/// Reads one envelope body. `Ok(None)` on a clean end of stream.
pub fn read_envelope(stream: &mut impl Read) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len == 0 || len > MAX_ENVELOPE {
        return Err(ProtocolError::BadLength(len));
    }
    let mut body = vec![0u8; len as usize];
    stream.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_message(stream: &mut impl Write, message: &Message) -> Result<(), ProtocolError> {
    let bytes = encode(message)?;
    stream.write_all(&bytes)?;
    stream.flush()?;
    Ok(())
}
