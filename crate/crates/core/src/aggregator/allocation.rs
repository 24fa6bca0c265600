use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::ledger::{Block, Chain, LedgerError, Tx};

/// Flexibility range of one prosumer, `p_min_w <= 0 <= p_max_w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    pub p_min_w: f64,
    pub p_max_w: f64,
}

impl Capacity {
    pub fn new(p_min_w: f64, p_max_w: f64) -> Self {
        Self { p_min_w, p_max_w }
    }

    /// Symmetric part of the range, used as the allocation weight.
    pub fn weight(&self) -> f64 {
        self.p_min_w.abs().min(self.p_max_w)
    }

    fn headroom(&self, direction: f64) -> f64 {
        if direction > 0.0 {
            self.p_max_w
        } else {
            -self.p_min_w
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("no capacities reported")]
    EmptyCapacities,
}

/// Latest capacity report per prosumer for `interval_idx`.
pub fn collect_capacities(blocks: &[Block], interval_idx: u32) -> BTreeMap<String, Capacity> {
    let mut out = BTreeMap::new();
    for b in blocks {
        for tx in &b.txs {
            if let Tx::CapacityReport {
                prosumer_id,
                interval_idx: idx,
                p_min_w,
                p_max_w,
                ..
            } = tx
            {
                if *idx == interval_idx {
                    out.insert(prosumer_id.clone(), Capacity::new(*p_min_w, *p_max_w));
                }
            }
        }
    }
    out
}

/// Splits the counteraction `target − p_rec` among prosumers in proportion to
/// their weights. Prosumers that hit a bound keep it and the remainder is
/// spread over the others until nothing more can be placed.
pub fn allocate_setpoints(
    p_rec_w: f64,
    target_w: f64,
    capacities: &BTreeMap<String, Capacity>,
) -> Result<BTreeMap<String, f64>, AllocationError> {
    if capacities.is_empty() {
        return Err(AllocationError::EmptyCapacities);
    }
    let need = target_w - p_rec_w;
    let mut out: BTreeMap<String, f64> = capacities.keys().map(|k| (k.clone(), 0.0)).collect();
    if need == 0.0 {
        return Ok(out);
    }
    let mut free: Vec<&String> = capacities.keys().collect();
    let mut remaining = need;
    // each pass either places everything or fixes at least one prosumer
    for _ in 0..=capacities.len() {
        if free.is_empty() || remaining == 0.0 {
            break;
        }
        let mut weights: Vec<f64> = free.iter().map(|k| capacities[*k].weight()).collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            // only one-sided ranges left: fall back to headroom in the needed direction
            weights = free.iter().map(|k| capacities[*k].headroom(remaining)).collect();
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut clamped = Vec::new();
        let mut placed = Vec::new();
        for (k, w) in free.iter().zip(&weights) {
            let cap = capacities[*k];
            let share = remaining * w / total;
            let bounded = share.clamp(cap.p_min_w, cap.p_max_w);
            if bounded != share {
                clamped.push((*k, bounded));
            } else {
                placed.push((*k, share));
            }
        }
        if clamped.is_empty() {
            for (k, v) in placed {
                out.insert(k.clone(), v);
            }
            break;
        }
        let fixed: HashSet<&String> = clamped.iter().map(|(k, _)| *k).collect();
        for (k, v) in clamped {
            out.insert(k.clone(), v);
            remaining -= v;
        }
        free.retain(|k| !fixed.contains(k));
    }
    Ok(out)
}

/// Appends one block with a setpoint per prosumer. Nothing is appended for
/// an empty allocation.
pub fn dispatch<'c>(
    chain: &'c mut Chain,
    allocations: &[(String, f64)],
    interval_idx: u32,
    now_us: u64,
) -> Result<Option<&'c Block>, LedgerError> {
    if allocations.is_empty() {
        return Ok(None);
    }
    let mut seen = HashSet::new();
    for (id, _) in allocations {
        if !seen.insert(id.as_str()) {
            return Err(LedgerError::DuplicateProsumer(id.clone()));
        }
    }
    let txs = allocations
        .iter()
        .map(|(id, p)| Tx::SetpointDispatch {
            prosumer_id: id.clone(),
            interval_idx,
            p_ref_w: *p,
        })
        .collect();
    chain.append_block(txs, now_us).map(Some)
}
