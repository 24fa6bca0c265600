use serde::{Deserialize, Serialize};

/// Retransmission intervals after a state change. The last interval is the
/// heartbeat and repeats forever.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetransmitSchedule {
    intervals_ms: Vec<u32>,
}

impl Default for RetransmitSchedule {
    fn default() -> Self {
        Self::doubling(4, 1000)
    }
}

impl RetransmitSchedule {
    /// `first, 2·first, 4·first, …` capped at `heartbeat_ms`.
    pub fn doubling(first_ms: u32, heartbeat_ms: u32) -> Self {
        assert!(first_ms > 0 && first_ms <= heartbeat_ms);
        let mut intervals_ms = vec![];
        let mut next = first_ms;
        while next < heartbeat_ms {
            intervals_ms.push(next);
            next = next.saturating_mul(2);
        }
        intervals_ms.push(heartbeat_ms);
        Self { intervals_ms }
    }

    /// `None` unless the list is non-empty and strictly increasing.
    pub fn from_intervals(intervals_ms: Vec<u32>) -> Option<Self> {
        let ok = !intervals_ms.is_empty()
            && intervals_ms[0] > 0
            && intervals_ms.windows(2).all(|w| w[0] < w[1]);
        ok.then_some(Self { intervals_ms })
    }

    pub fn intervals_ms(&self) -> &[u32] {
        &self.intervals_ms
    }

    pub fn heartbeat_ms(&self) -> u32 {
        *self.intervals_ms.last().expect("non-empty")
    }

    /// Gap after the `n`-th transmission of a state (n = sqNum).
    pub fn interval_ms(&self, n: usize) -> u32 {
        self.intervals_ms[n.min(self.intervals_ms.len() - 1)]
    }

    pub fn ttl_ms(&self, n: usize) -> u32 {
        self.interval_ms(n).saturating_mul(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let s = RetransmitSchedule::default();
        assert_eq!(
            s.intervals_ms(),
            &[4, 8, 16, 32, 64, 128, 256, 512, 1000]
        );
        assert_eq!(s.interval_ms(100), 1000);
        assert_eq!(s.ttl_ms(0), 8);
        assert_eq!(s.ttl_ms(50), 2000);
    }

    #[test]
    fn validation() {
        assert!(RetransmitSchedule::from_intervals(vec![]).is_none());
        assert!(RetransmitSchedule::from_intervals(vec![4, 4]).is_none());
        assert!(RetransmitSchedule::from_intervals(vec![0, 4]).is_none());
        assert!(RetransmitSchedule::from_intervals(vec![2, 10, 50]).is_some());
    }
}
