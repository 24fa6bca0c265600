//! Big-endian primitives and the tag-length-value encoding of [`DataValue`]
//! shared by the GOOSE frames and the ACSI protocol.
//!
//! | tag  | variant     | body                      |
//! |------|-------------|---------------------------|
//! | 0x01 | Bool        | 1 byte, 0 or 1            |
//! | 0x02 | Int32       | 4 bytes                   |
//! | 0x03 | Float32     | 4 bytes IEEE-754          |
//! | 0x04 | Float64     | 8 bytes IEEE-754          |
//! | 0x05 | Text        | u16 length + UTF-8        |
//! | 0x06 | TimestampUs | 8 bytes                   |

use thiserror::Error;

use crate::model::{DataValue, ObjectReference};

pub const TAG_BOOL: u8 = 0x01;
pub const TAG_INT32: u8 = 0x02;
pub const TAG_FLOAT32: u8 = 0x03;
pub const TAG_FLOAT64: u8 = 0x04;
pub const TAG_TEXT: u8 = 0x05;
pub const TAG_TIMESTAMP: u8 = 0x06;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input truncated")]
    Truncated,
    #[error("unknown value tag 0x{0:02x}")]
    BadTag(u8),
    #[error("invalid boolean byte 0x{0:02x}")]
    BadBool(u8),
    #[error("invalid UTF-8 text")]
    BadUtf8,
    #[error("invalid object reference {0:?}")]
    BadReference(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("text of {0} bytes exceeds u16 length prefix")]
    TextTooLong(usize),
    #[error("{0} items exceed u16 count prefix")]
    TooManyItems(usize),
}

pub fn put_text(out: &mut Vec<u8>, text: &str) -> Result<(), EncodeError> {
    let len = u16::try_from(text.len()).map_err(|_| EncodeError::TextTooLong(text.len()))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(())
}

pub fn put_count(out: &mut Vec<u8>, n: usize) -> Result<(), EncodeError> {
    let n16 = u16::try_from(n).map_err(|_| EncodeError::TooManyItems(n))?;
    out.extend_from_slice(&n16.to_be_bytes());
    Ok(())
}

pub fn put_value(out: &mut Vec<u8>, value: &DataValue) -> Result<(), EncodeError> {
    match value {
        DataValue::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(u8::from(*b));
        }
        DataValue::Int32(v) => {
            out.push(TAG_INT32);
            out.extend_from_slice(&v.to_be_bytes());
        }
        DataValue::Float32(v) => {
            out.push(TAG_FLOAT32);
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        DataValue::Float64(v) => {
            out.push(TAG_FLOAT64);
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        DataValue::Text(s) => {
            out.push(TAG_TEXT);
            put_text(out, s)?;
        }
        DataValue::TimestampUs(v) => {
            out.push(TAG_TIMESTAMP);
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    Ok(())
}

/// Forward-only reader over a byte slice.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        self.array().map(u16::from_be_bytes)
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        self.array().map(u32::from_be_bytes)
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        self.array().map(u64::from_be_bytes)
    }

    pub fn i32(&mut self) -> Result<i32, DecodeError> {
        self.array().map(i32::from_be_bytes)
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        self.u64().map(f64::from_bits)
    }

    pub fn text(&mut self) -> Result<String, DecodeError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::BadUtf8)
    }

    pub fn reference(&mut self) -> Result<ObjectReference, DecodeError> {
        let text = self.text()?;
        text.parse().map_err(|_| DecodeError::BadReference(text))
    }

    pub fn value(&mut self) -> Result<DataValue, DecodeError> {
        let tag = self.u8()?;
        Ok(match tag {
            TAG_BOOL => match self.u8()? {
                0 => DataValue::Bool(false),
                1 => DataValue::Bool(true),
                b => return Err(DecodeError::BadBool(b)),
            },
            TAG_INT32 => DataValue::Int32(self.i32()?),
            TAG_FLOAT32 => DataValue::Float32(f32::from_bits(self.u32()?)),
            TAG_FLOAT64 => DataValue::Float64(self.f64()?),
            TAG_TEXT => DataValue::Text(self.text()?),
            TAG_TIMESTAMP => DataValue::TimestampUs(self.u64()?),
            other => return Err(DecodeError::BadTag(other)),
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn value_layouts() {
        let mut b = Vec::new();
        put_value(&mut b, &DataValue::Bool(true)).unwrap();
        put_value(&mut b, &DataValue::Int32(-2)).unwrap();
        put_value(&mut b, &DataValue::Float32(1.0)).unwrap();
        put_value(&mut b, &DataValue::Text("ab".into())).unwrap();
        assert_eq!(
            b,
            [
                0x01, 0x01, //
                0x02, 0xff, 0xff, 0xff, 0xfe, //
                0x03, 0x3f, 0x80, 0x00, 0x00, //
                0x05, 0x00, 0x02, b'a', b'b',
            ]
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Reader::new(&[0x07]).value(), Err(DecodeError::BadTag(7)));
        assert_eq!(Reader::new(&[0x01, 2]).value(), Err(DecodeError::BadBool(2)));
        assert_eq!(Reader::new(&[0x02, 0, 0]).value(), Err(DecodeError::Truncated));
        assert_eq!(
            Reader::new(&[0x05, 0, 1, 0xff]).value(),
            Err(DecodeError::BadUtf8)
        );
        let long = "x".repeat(70_000);
        assert_eq!(
            put_value(&mut Vec::new(), &DataValue::Text(long)),
            Err(EncodeError::TextTooLong(70_000))
        );
    }

    proptest! {
        #[test]
        fn value_roundtrip(v in strategies::data_value()) {
            let mut b = Vec::new();
            put_value(&mut b, &v).unwrap();
            let mut r = Reader::new(&b);
            prop_assert!(r.value().unwrap().bit_eq(&v));
            prop_assert_eq!(r.remaining(), 0);
        }
    }
}
