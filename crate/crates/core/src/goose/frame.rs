use thiserror::Error;

use crate::model::DataValue;
use crate::tlv::{self, DecodeError, EncodeError, Reader};

pub const MAGIC: [u8; 4] = *b"GSE1";
pub const VERSION: u8 = 0x01;

/// One state-change message.
#[derive(Debug, Clone, PartialEq)]
pub struct GooseFrame {
    pub app_id: u16,
    pub go_id: String,
    /// Incremented on every change of the published data.
    pub st_num: u32,
    /// Zero on the first transmission of a state, then counts retransmissions.
    pub sq_num: u32,
    pub timestamp_us: u64,
    /// How long the receiver should consider this frame valid.
    pub ttl_ms: u32,
    pub entries: Vec<DataValue>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("goId is {0} bytes, limit is 255")]
    GoIdTooLong(usize),
    #[error("{0}")]
    Encode(#[from] EncodeError),
    #[error("frame truncated")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("malformed entry: {0}")]
    BadEntry(DecodeError),
}

impl From<DecodeError> for FrameError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Truncated => FrameError::Truncated,
            other => FrameError::BadEntry(other),
        }
    }
}

impl GooseFrame {
    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        encode_frame(self)
    }

    /// Entries compare equal bit for bit.
    pub fn same_entries(&self, other: &[DataValue]) -> bool {
        self.entries.len() == other.len()
            && self.entries.iter().zip(other).all(|(a, b)| a.bit_eq(b))
    }
}

pub fn encode_frame(frame: &GooseFrame) -> Result<Vec<u8>, FrameError> {
    let go_id = frame.go_id.as_bytes();
    let go_len = u8::try_from(go_id.len()).map_err(|_| FrameError::GoIdTooLong(go_id.len()))?;
    let mut out = Vec::with_capacity(34 + go_id.len() + frame.entries.len() * 5);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&frame.app_id.to_be_bytes());
    out.push(go_len);
    out.extend_from_slice(go_id);
    out.extend_from_slice(&frame.st_num.to_be_bytes());
    out.extend_from_slice(&frame.sq_num.to_be_bytes());
    out.extend_from_slice(&frame.timestamp_us.to_be_bytes());
    out.extend_from_slice(&frame.ttl_ms.to_be_bytes());
    tlv::put_count(&mut out, frame.entries.len())?;
    for e in &frame.entries {
        tlv::put_value(&mut out, e)?;
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<GooseFrame, FrameError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(FrameError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(FrameError::BadVersion(version));
    }
    let app_id = r.u16()?;
    let go_len = r.u8()? as usize;
    let go_id = std::str::from_utf8(r.take(go_len)?)
        .map_err(|_| FrameError::BadEntry(DecodeError::BadUtf8))?
        .to_owned();
    let st_num = r.u32()?;
    let sq_num = r.u32()?;
    let timestamp_us = r.u64()?;
    let ttl_ms = r.u32()?;
    let n = r.u16()? as usize;
    let mut entries = Vec::with_capacity(n.min(r.remaining()));
    for _ in 0..n {
        entries.push(r.value()?);
    }
    if r.remaining() != 0 {
        return Err(FrameError::TrailingBytes(r.remaining()));
    }
    Ok(GooseFrame {
        app_id,
        go_id,
        st_num,
        sq_num,
        timestamp_us,
        ttl_ms,
        entries,
    })
}

#[cfg(test)]
pub(crate) mod strategies {
    use super::*;
    use crate::tlv::strategies::data_value;
    use proptest::collection::vec;
    use proptest::prelude::*;

    prop_compose! {
        pub fn frame()(app_id in any::<u16>(),
                       go_id in "[a-zA-Z0-9/$._-]{0,64}",
                       st_num in any::<u32>(),
                       sq_num in any::<u32>(),
                       timestamp_us in any::<u64>(),
                       ttl_ms in 1u32..,
                       entries in vec(data_value(), 0..12)) -> GooseFrame {
            GooseFrame { app_id, go_id, st_num, sq_num, timestamp_us, ttl_ms, entries }
        }
    }
}
