//! Single-writer SHA-256 hash chain.
//!
//! Canonical block form, big-endian:
//!
//! ```text
//! index u64 | prevHash [32] | timestampUs u64 | txCount u16 | tx*
//! tx = tag u8 | prosumerId (u16 len + UTF-8) | intervalIdx u32 | fields | signature [64]
//!   0x01 capacity:    pMinW f64 | pMaxW f64 | profile (u16 count + f64*)
//!   0x02 setpoint:    pRefW f64
//!   0x03 measurement: energyErrorKwh f64 | meanPGridW f64
//! ```
//!
//! The signature is reserved and always zero. The log file stores each block
//! as `u32 length | canonical block | hash [32]`.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tlv::{put_count, put_text, DecodeError, EncodeError, Reader};

pub type Hash = [u8; 32];
pub const ZERO_HASH: Hash = [0; 32];
const SIGNATURE_LEN: usize = 64;

const TAG_CAPACITY: u8 = 0x01;
const TAG_SETPOINT: u8 = 0x02;
const TAG_MEASUREMENT: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Tx {
    #[serde(rename_all = "camelCase")]
    CapacityReport {
        prosumer_id: String,
        interval_idx: u32,
        p_min_w: f64,
        p_max_w: f64,
        expected_profile_w: Vec<f64>,
    },
    #[serde(rename_all = "camelCase")]
    SetpointDispatch {
        prosumer_id: String,
        interval_idx: u32,
        p_ref_w: f64,
    },
    #[serde(rename_all = "camelCase")]
    MeasurementReport {
        prosumer_id: String,
        interval_idx: u32,
        energy_error_kwh: f64,
        mean_p_grid_w: f64,
    },
}

impl Tx {
    pub fn prosumer_id(&self) -> &str {
        match self {
            Tx::CapacityReport { prosumer_id, .. }
            | Tx::SetpointDispatch { prosumer_id, .. }
            | Tx::MeasurementReport { prosumer_id, .. } => prosumer_id,
        }
    }

    pub fn interval_idx(&self) -> u32 {
        match self {
            Tx::CapacityReport { interval_idx, .. }
            | Tx::SetpointDispatch { interval_idx, .. }
            | Tx::MeasurementReport { interval_idx, .. } => *interval_idx,
        }
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if let Tx::CapacityReport { p_min_w, p_max_w, .. } = self {
            if !(*p_min_w <= 0.0 && 0.0 <= *p_max_w) {
                return Err(LedgerError::InvalidTx(format!(
                    "capacity [{p_min_w}, {p_max_w}] must contain 0"
                )));
            }
        }
        Ok(())
    }

    fn encode(&self, out: &mut Vec<u8>) -> Result<(), EncodeError> {
        let head = |out: &mut Vec<u8>, tag: u8, id: &str, idx: u32| -> Result<(), EncodeError> {
            out.push(tag);
            put_text(out, id)?;
            out.extend_from_slice(&idx.to_be_bytes());
            Ok(())
        };
        match self {
            Tx::CapacityReport {
                prosumer_id,
                interval_idx,
                p_min_w,
                p_max_w,
                expected_profile_w,
            } => {
                head(out, TAG_CAPACITY, prosumer_id, *interval_idx)?;
                out.extend_from_slice(&p_min_w.to_be_bytes());
                out.extend_from_slice(&p_max_w.to_be_bytes());
                put_count(out, expected_profile_w.len())?;
                for p in expected_profile_w {
                    out.extend_from_slice(&p.to_be_bytes());
                }
            }
            Tx::SetpointDispatch {
                prosumer_id,
                interval_idx,
                p_ref_w,
            } => {
                head(out, TAG_SETPOINT, prosumer_id, *interval_idx)?;
                out.extend_from_slice(&p_ref_w.to_be_bytes());
            }
            Tx::MeasurementReport {
                prosumer_id,
                interval_idx,
                energy_error_kwh,
                mean_p_grid_w,
            } => {
                head(out, TAG_MEASUREMENT, prosumer_id, *interval_idx)?;
                out.extend_from_slice(&energy_error_kwh.to_be_bytes());
                out.extend_from_slice(&mean_p_grid_w.to_be_bytes());
            }
        }
        out.extend_from_slice(&[0u8; SIGNATURE_LEN]);
        Ok(())
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, BlockDecodeError> {
        let tag = r.u8()?;
        let prosumer_id = r.text()?;
        let interval_idx = r.u32()?;
        let tx = match tag {
            TAG_CAPACITY => {
                let p_min_w = r.f64()?;
                let p_max_w = r.f64()?;
                let n = r.u16()?;
                let expected_profile_w = (0..n).map(|_| r.f64()).collect::<Result<_, _>>()?;
                Tx::CapacityReport {
                    prosumer_id,
                    interval_idx,
                    p_min_w,
                    p_max_w,
                    expected_profile_w,
                }
            }
            TAG_SETPOINT => Tx::SetpointDispatch {
                prosumer_id,
                interval_idx,
                p_ref_w: r.f64()?,
            },
            TAG_MEASUREMENT => Tx::MeasurementReport {
                prosumer_id,
                interval_idx,
                energy_error_kwh: r.f64()?,
                mean_p_grid_w: r.f64()?,
            },
            other => return Err(BlockDecodeError::BadTxTag(other)),
        };
        if r.take(SIGNATURE_LEN)?.iter().any(|b| *b != 0) {
            return Err(BlockDecodeError::Signature);
        }
        Ok(tx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    #[serde(with = "hex_hash")]
    pub prev_hash: Hash,
    pub timestamp_us: u64,
    pub txs: Vec<Tx>,
    #[serde(with = "hex_hash")]
    pub hash: Hash,
}

mod hex_hash {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(h: &super::Hash, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<super::Hash, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BlockDecodeError {
    #[error(transparent)]
    Field(#[from] DecodeError),
    #[error("unknown transaction tag 0x{0:02x}")]
    BadTxTag(u8),
    #[error("reserved signature bytes are not zero")]
    Signature,
    #[error("{0} unread bytes in block record")]
    Trailing(usize),
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("invalid transaction: {0}")]
    InvalidTx(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("block {index}: {reason}")]
    Corrupt { index: u64, reason: String },
    #[error("prosumer {0} appears twice in one dispatch")]
    DuplicateProsumer(String),
}

impl Block {
    /// Canonical serialization without the hash.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        canonical(self.index, &self.prev_hash, self.timestamp_us, &self.txs)
    }

    pub fn compute_hash(&self) -> Result<Hash, EncodeError> {
        Ok(Sha256::digest(self.canonical_bytes()?).into())
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash)
    }

    pub fn decode_canonical(bytes: &[u8], hash: Hash) -> Result<Self, BlockDecodeError> {
        let mut r = Reader::new(bytes);
        let index = r.u64()?;
        let prev_hash: Hash = r.take(32)?.try_into().expect("32 bytes");
        let timestamp_us = r.u64()?;
        let n = r.u16()?;
        let txs = (0..n).map(|_| Tx::decode(&mut r)).collect::<Result<_, _>>()?;
        if r.remaining() != 0 {
            return Err(BlockDecodeError::Trailing(r.remaining()));
        }
        Ok(Block {
            index,
            prev_hash,
            timestamp_us,
            txs,
            hash,
        })
    }

    /// One log record: length, canonical block, hash.
    pub fn record_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let body = self.canonical_bytes()?;
        let mut out = Vec::with_capacity(body.len() + 36);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&self.hash);
        Ok(out)
    }
}

fn canonical(index: u64, prev: &Hash, ts: u64, txs: &[Tx]) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(64 + txs.len() * 96);
    out.extend_from_slice(&index.to_be_bytes());
    out.extend_from_slice(prev);
    out.extend_from_slice(&ts.to_be_bytes());
    put_count(&mut out, txs.len())?;
    for tx in txs {
        tx.encode(&mut out)?;
    }
    Ok(out)
}

/// Why verification stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyFailure {
    /// Position of the first bad block in the chain.
    pub index: u64,
    pub reason: String,
}

impl std::fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "block {}: {}", self.index, self.reason)
    }
}

/// Recomputes every hash and link. An empty chain is valid.
pub fn verify_chain(blocks: &[Block]) -> Result<(), VerifyFailure> {
    let mut prev = ZERO_HASH;
    for (pos, b) in blocks.iter().enumerate() {
        let fail = |reason: &str| VerifyFailure {
            index: pos as u64,
            reason: reason.to_owned(),
        };
        if b.index != pos as u64 {
            return Err(fail("index out of sequence"));
        }
        if b.prev_hash != prev {
            return Err(fail("previous hash does not link"));
        }
        match b.compute_hash() {
            Ok(h) if h == b.hash => {}
            Ok(_) => return Err(fail("hash mismatch")),
            Err(e) => return Err(fail(&e.to_string())),
        }
        prev = b.hash;
    }
    Ok(())
}

/// Parses a block log. Stops at the first record that does not parse and
/// reports its position.
pub fn parse_log(bytes: &[u8]) -> Result<Vec<Block>, VerifyFailure> {
    let mut blocks = Vec::new();
    let mut r = Reader::new(bytes);
    while r.remaining() > 0 {
        let pos = blocks.len() as u64;
        let fail = |reason: String| VerifyFailure { index: pos, reason };
        let len = r.u32().map_err(|e| fail(format!("record length: {e}")))? as usize;
        let body = r.take(len).map_err(|e| fail(format!("record body: {e}")))?;
        let hash: Hash = r
            .take(32)
            .map_err(|e| fail(format!("record hash: {e}")))?
            .try_into()
            .expect("32 bytes");
        let block = Block::decode_canonical(body, hash).map_err(|e| fail(e.to_string()))?;
        blocks.push(block);
    }
    Ok(blocks)
}

/// Parses and verifies a block log.
pub fn verify_log(bytes: &[u8]) -> Result<Vec<Block>, VerifyFailure> {
    let blocks = parse_log(bytes)?;
    verify_chain(&blocks)?;
    Ok(blocks)
}

/// In-memory chain with an optional append-only log file.
#[derive(Debug)]
pub struct Chain {
    blocks: Vec<Block>,
    log: Option<File>,
}

impl Chain {
    /// Chain holding only the genesis block.
    pub fn new(genesis_ts_us: u64) -> Self {
        let mut c = Self {
            blocks: Vec::new(),
            log: None,
        };
        c.append_block(Vec::new(), genesis_ts_us)
            .expect("genesis block always encodes");
        c
    }

    /// Writes the existing blocks to `path` (truncating) and appends every
    /// later block to it.
    pub fn persist_to(&mut self, path: &Path) -> Result<(), LedgerError> {
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        for b in &self.blocks {
            f.write_all(&b.record_bytes()?)?;
        }
        f.flush()?;
        self.log = Some(f);
        Ok(())
    }

    /// Loads and verifies a log, keeping it open for appends.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let blocks = verify_log(&bytes).map_err(|f| LedgerError::Corrupt {
            index: f.index,
            reason: f.reason,
        })?;
        let log = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            blocks,
            log: Some(log),
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip_hash(&self) -> Hash {
        self.blocks.last().map_or(ZERO_HASH, |b| b.hash)
    }

    pub fn append_block(&mut self, txs: Vec<Tx>, now_us: u64) -> Result<&Block, LedgerError> {
        for tx in &txs {
            tx.validate()?;
        }
        let index = self.blocks.len() as u64;
        let prev_hash = self.tip_hash();
        let mut block = Block {
            index,
            prev_hash,
            timestamp_us: now_us,
            txs,
            hash: ZERO_HASH,
        };
        block.hash = block.compute_hash()?;
        if let Some(log) = &mut self.log {
            log.write_all(&block.record_bytes()?)?;
            log.flush()?;
        }
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn verify(&self) -> Result<(), VerifyFailure> {
        verify_chain(&self.blocks)
    }

    /// Whole chain in log format.
    pub fn to_log_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.record_bytes()?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn golden_txs() -> Vec<Tx> {
        vec![
            Tx::CapacityReport {
                prosumer_id: "p1".into(),
                interval_idx: 0,
                p_min_w: -2000.0,
                p_max_w: 2000.0,
                expected_profile_w: vec![100.0, -250.5],
            },
            Tx::SetpointDispatch {
                prosumer_id: "p1".into(),
                interval_idx: 0,
                p_ref_w: -1000.0,
            },
            Tx::MeasurementReport {
                prosumer_id: "p1".into(),
                interval_idx: 0,
                energy_error_kwh: 0.25,
                mean_p_grid_w: -987.5,
            },
        ]
    }

    #[test]
    fn genesis_only_is_valid() {
        let c = Chain::new(0);
        assert_eq!(c.len(), 1);
        assert_eq!(c.blocks()[0].prev_hash, ZERO_HASH);
        assert!(c.verify().is_ok());
    }

    #[test]
    fn golden_digests() {
        // values produced by tests/oracles/golden_ledger.py
        let mut c = Chain::new(1_700_000_000_000_000);
        c.append_block(golden_txs(), 1_700_000_900_000_000).unwrap();
        assert_eq!(
            c.blocks()[0].hash_hex(),
            "ecf4de38a9609041372a5337d9a0331a26a1fa6210f81abc190067814a6efa84"
        );
        assert_eq!(
            c.blocks()[1].hash_hex(),
            "1238bf5cc42c87a0fb062e1015c6e1b3c59c202098db203b173ed221c3eb7142"
        );
    }

    #[test]
    fn log_roundtrip() {
        let mut c = Chain::new(5);
        c.append_block(golden_txs(), 10).unwrap();
        let bytes = c.to_log_bytes().unwrap();
        assert_eq!(verify_log(&bytes).unwrap(), c.blocks());
    }

    #[test]
    fn every_byte_flip_is_detected() {
        let mut c = Chain::new(5);
        for k in 0..3 {
            c.append_block(golden_txs(), 10 + k).unwrap();
        }
        let bytes = c.to_log_bytes().unwrap();
        let mut starts = vec![0usize];
        for b in c.blocks() {
            starts.push(starts.last().unwrap() + b.record_bytes().unwrap().len());
        }
        for pos in 0..bytes.len() {
            let mut m = bytes.clone();
            m[pos] ^= 0x01;
            let owner = starts.windows(2).position(|w| pos >= w[0] && pos < w[1]).unwrap();
            let err = verify_log(&m).expect_err("mutation must be detected");
            assert_eq!(err.index, owner as u64, "byte {pos}");
        }
    }

    #[test]
    fn capacity_must_contain_zero() {
        let mut c = Chain::new(0);
        let bad = Tx::CapacityReport {
            prosumer_id: "p".into(),
            interval_idx: 0,
            p_min_w: 10.0,
            p_max_w: 20.0,
            expected_profile_w: vec![],
        };
        assert!(matches!(c.append_block(vec![bad], 1), Err(LedgerError::InvalidTx(_))));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn file_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.log");
        let mut c = Chain::new(1);
        c.persist_to(&path).unwrap();
        c.append_block(golden_txs(), 2).unwrap();
        drop(c);
        let mut reopened = Chain::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        reopened.append_block(vec![], 3).unwrap();
        let again = Chain::open(&path).unwrap();
        assert_eq!(again.len(), 3);
        assert!(again.verify().is_ok());
    }
}
