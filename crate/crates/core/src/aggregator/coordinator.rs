use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::allocation::{allocate_setpoints, collect_capacities, dispatch, AllocationError};
use super::ledger::{verify_chain, Block, Chain, LedgerError, Tx, VerifyFailure};
use super::rec::{RecProfile, INTERVAL_S};

#[derive(Debug, thiserror::Error)]
pub enum AggregatorError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Passive community members that only report a symmetric capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeerConfig {
    pub count: u32,
    pub cap_w: f64,
}

impl Default for PeerConfig {
    fn default() -> Self {
        Self {
            count: 34,
            cap_w: 2000.0,
        }
    }
}

/// Community-level coordinator and sole writer of the chain.
pub struct Aggregator {
    chain: Chain,
    rec: RecProfile,
    target_w: Vec<f64>,
    peers: PeerConfig,
    pending: Vec<Tx>,
}

impl Aggregator {
    pub fn new(chain: Chain, rec: RecProfile, target_w: Vec<f64>, peers: PeerConfig) -> Self {
        Self {
            chain,
            rec,
            target_w,
            peers,
            pending: Vec::new(),
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn into_chain(self) -> Chain {
        self.chain
    }

    pub fn rec(&self) -> &RecProfile {
        &self.rec
    }

    pub fn target_at(&self, interval_idx: usize) -> f64 {
        if self.target_w.is_empty() {
            return 0.0;
        }
        self.target_w[interval_idx % self.target_w.len()]
    }

    /// Queues a transaction for the next block.
    pub fn submit(&mut self, tx: Tx) {
        self.pending.push(tx);
    }

    fn peer_reports(&self, interval_idx: u32) -> impl Iterator<Item = Tx> + '_ {
        (0..self.peers.count).map(move |i| Tx::CapacityReport {
            prosumer_id: format!("peer{i:02}"),
            interval_idx,
            p_min_w: -self.peers.cap_w,
            p_max_w: self.peers.cap_w,
            expected_profile_w: Vec::new(),
        })
    }

    /// Records queued reports plus the peers' capacities, allocates the
    /// counteraction for `interval_idx` and dispatches it.
    pub fn run_interval(&mut self, interval_idx: u32, now_us: u64) -> Result<BTreeMap<String, f64>, AggregatorError> {
        let mut txs = std::mem::take(&mut self.pending);
        txs.extend(self.peer_reports(interval_idx));
        self.chain.append_block(txs, now_us)?;
        let caps = collect_capacities(self.chain.blocks(), interval_idx);
        let k = interval_idx as usize;
        let alloc = allocate_setpoints(self.rec.at(k), self.target_at(k), &caps)?;
        let list: Vec<(String, f64)> = alloc.iter().map(|(k, v)| (k.clone(), *v)).collect();
        dispatch(&mut self.chain, &list, interval_idx, now_us)?;
        Ok(alloc)
    }

    /// Appends whatever is still queued.
    pub fn flush(&mut self, now_us: u64) -> Result<(), AggregatorError> {
        if !self.pending.is_empty() {
            let txs = std::mem::take(&mut self.pending);
            self.chain.append_block(txs, now_us)?;
        }
        Ok(())
    }
}

/// When the dispatch for `interval_idx` is due, given the lead time.
pub fn dispatch_time_s(interval_idx: u32, lead_s: f64) -> f64 {
    (f64::from(interval_idx) * INTERVAL_S - lead_s).max(0.0)
}

/// Prosumer-side reader: verifies new blocks and picks up its own setpoints.
#[derive(Debug, Clone)]
pub struct ProsumerNode {
    id: String,
    seen: usize,
    last_hash: [u8; 32],
    setpoints: BTreeMap<u32, f64>,
}

impl ProsumerNode {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            seen: 0,
            last_hash: [0; 32],
            setpoints: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Scans blocks appended since the previous call.
    pub fn scan(&mut self, blocks: &[Block]) -> Result<usize, VerifyFailure> {
        let new = &blocks[self.seen.min(blocks.len())..];
        if self.seen == 0 {
            verify_chain(new)?;
        } else {
            // verify the new suffix against the hash we already trust
            for (i, b) in new.iter().enumerate() {
                let index = (self.seen + i) as u64;
                let prev = if i == 0 { self.last_hash } else { new[i - 1].hash };
                if b.index != index || b.prev_hash != prev || b.compute_hash().ok() != Some(b.hash) {
                    return Err(VerifyFailure {
                        index,
                        reason: "block does not verify".into(),
                    });
                }
            }
        }
        for b in new {
            for tx in &b.txs {
                if let Tx::SetpointDispatch {
                    prosumer_id,
                    interval_idx,
                    p_ref_w,
                } = tx
                {
                    if *prosumer_id == self.id {
                        self.setpoints.insert(*interval_idx, *p_ref_w);
                    }
                }
            }
        }
        if let Some(last) = new.last() {
            self.last_hash = last.hash;
        }
        self.seen += new.len();
        Ok(new.len())
    }

    pub fn setpoint(&self, interval_idx: u32) -> Option<f64> {
        self.setpoints.get(&interval_idx).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(p_rec: Vec<f64>, peers: u32) -> Aggregator {
        Aggregator::new(
            Chain::new(0),
            RecProfile {
                interval_s: INTERVAL_S,
                p_rec_w: p_rec,
            },
            Vec::new(),
            PeerConfig { count: peers, cap_w: 2000.0 },
        )
    }

    #[test]
    fn interval_dispatch_reaches_prosumer() {
        let mut a = agg(vec![4000.0], 1);
        a.submit(Tx::CapacityReport {
            prosumer_id: "home".into(),
            interval_idx: 0,
            p_min_w: -2000.0,
            p_max_w: 2000.0,
            expected_profile_w: vec![],
        });
        let alloc = a.run_interval(0, 1).unwrap();
        assert_eq!(alloc["home"], -2000.0);
        assert_eq!(alloc["peer00"], -2000.0);
        let mut node = ProsumerNode::new("home");
        assert_eq!(node.scan(a.chain().blocks()).unwrap(), 3);
        assert_eq!(node.setpoint(0), Some(-2000.0));
        assert_eq!(node.setpoint(1), None);
        assert!(a.chain().verify().is_ok());
    }

    #[test]
    fn node_detects_tampering() {
        let mut a = agg(vec![0.0], 2);
        a.run_interval(0, 1).unwrap();
        let mut node = ProsumerNode::new("peer00");
        node.scan(a.chain().blocks()).unwrap();
        a.run_interval(1, 2).unwrap();
        let mut blocks = a.chain().blocks().to_vec();
        blocks[3].timestamp_us += 1;
        assert_eq!(node.scan(&blocks).unwrap_err().index, 3);
    }

    #[test]
    fn lead_time() {
        assert_eq!(dispatch_time_s(0, 60.0), 0.0);
        assert_eq!(dispatch_time_s(4, 60.0), 3540.0);
    }
}
