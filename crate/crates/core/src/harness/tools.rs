//! Debug utilities behind the `verify-ledger` and `goose-dump` commands.

use std::io::{self, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use crate::aggregator::ledger::{parse_log, verify_chain};
use crate::goose::{decode_frame, GooseFrame, MulticastConfig, UdpMulticastReceiver};

/// Outcome of [`verify_ledger`], mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerStatus {
    Valid,
    Invalid,
    Unreadable,
}

impl LedgerStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            LedgerStatus::Valid => 0,
            LedgerStatus::Invalid => 1,
            LedgerStatus::Unreadable => 2,
        }
    }
}

/// Prints one line per block and stops at the first bad one.
pub fn verify_ledger(path: &Path, out: &mut impl Write) -> io::Result<LedgerStatus> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            writeln!(out, "cannot read {}: {e}", path.display())?;
            return Ok(LedgerStatus::Unreadable);
        }
    };
    let (blocks, parse_failure) = match parse_log(&bytes) {
        Ok(b) => (b, None),
        Err(f) => {
            // report what parsed before the damaged record
            let good = parse_prefix(&bytes, f.index as usize);
            (good, Some(f))
        }
    };
    let chain_failure = verify_chain(&blocks).err();
    let first_bad = match (&chain_failure, &parse_failure) {
        (Some(c), _) => Some(c.clone()),
        (None, Some(p)) => Some(p.clone()),
        (None, None) => None,
    };
    for b in &blocks {
        if first_bad.as_ref().is_some_and(|f| f.index == b.index) {
            break;
        }
        writeln!(out, "block {} ok {} txs={}", b.index, b.hash_hex(), b.txs.len())?;
    }
    match first_bad {
        None => {
            writeln!(out, "chain valid: {} blocks", blocks.len())?;
            Ok(LedgerStatus::Valid)
        }
        Some(f) => {
            writeln!(out, "block {} INVALID: {}", f.index, f.reason)?;
            Ok(LedgerStatus::Invalid)
        }
    }
}

/// Blocks of the first `n` records of a log whose record `n` is damaged.
fn parse_prefix(bytes: &[u8], n: usize) -> Vec<crate::aggregator::Block> {
    let mut end = 0usize;
    for _ in 0..n {
        let Some(len) = bytes.get(end..end + 4) else { break };
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        end += 4 + len + 32;
    }
    parse_log(&bytes[..end.min(bytes.len())]).unwrap_or_default()
}

/// One line per frame: receive time, goId, stNum, sqNum, entries.
pub fn format_frame(elapsed: Duration, f: &GooseFrame) -> String {
    let entries: Vec<String> = f.entries.iter().map(|v| format!("{v:?}")).collect();
    format!(
        "{:.6} {} st={} sq={} ttl={}ms [{}]",
        elapsed.as_secs_f64(),
        f.go_id,
        f.st_num,
        f.sq_num,
        f.ttl_ms,
        entries.join(", ")
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpSummary {
    pub frames: u64,
    pub decode_errors: u64,
}

/// Listens on the multicast group for `duration` and prints every frame.
/// Undecodable datagrams are counted, not fatal.
pub fn goose_dump(cfg: &MulticastConfig, duration: Duration, out: &mut impl Write) -> io::Result<DumpSummary> {
    let mut rx = UdpMulticastReceiver::bind(cfg)?;
    let start = Instant::now();
    let mut summary = DumpSummary::default();
    while let Some(left) = duration.checked_sub(start.elapsed()) {
        if left.is_zero() {
            break;
        }
        let Some(bytes) = rx.recv(left.min(Duration::from_millis(100)))? else {
            continue;
        };
        match decode_frame(bytes) {
            Ok(f) => {
                summary.frames += 1;
                writeln!(out, "{}", format_frame(start.elapsed(), &f))?;
            }
            Err(e) => {
                summary.decode_errors += 1;
                log::debug!("undecodable datagram: {e}");
            }
        }
    }
    Ok(summary)
}
