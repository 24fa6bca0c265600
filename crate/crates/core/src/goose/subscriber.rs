use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{decode_frame, FrameError, GooseFrame};
use super::transport::{MulticastConfig, UdpMulticastReceiver};
use crate::model::DataValue;

type Callback = Box<dyn FnMut(&GooseFrame) + Send>;

struct Subscription {
    callback: Callback,
    delivered: Option<(u32, Vec<DataValue>)>,
    last_rx_us: Option<u64>,
    last_ttl_ms: u32,
}

/// Receiving side. Delivers each new state once per goId and tracks
/// time-to-live for staleness.
#[derive(Default)]
pub struct GooseSubscriber {
    subs: HashMap<String, Subscription>,
    decode_errors: u64,
}

impl GooseSubscriber {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, go_id: &str, callback: impl FnMut(&GooseFrame) + Send + 'static) {
        self.subs.insert(
            go_id.to_owned(),
            Subscription {
                callback: Box::new(callback),
                delivered: None,
                last_rx_us: None,
                last_ttl_ms: 0,
            },
        );
    }

    /// Returns true when the callback was invoked.
    pub fn on_frame(&mut self, frame: &GooseFrame, now_us: u64) -> bool {
        let Some(sub) = self.subs.get_mut(&frame.go_id) else {
            return false;
        };
        sub.last_rx_us = Some(now_us);
        sub.last_ttl_ms = frame.ttl_ms;
        let repeat = matches!(&sub.delivered,
            Some((st, values)) if *st == frame.st_num && frame.same_entries(values));
        if repeat {
            return false;
        }
        sub.delivered = Some((frame.st_num, frame.entries.clone()));
        (sub.callback)(frame);
        true
    }

    pub fn on_bytes(&mut self, bytes: &[u8], now_us: u64) -> Result<bool, FrameError> {
        match decode_frame(bytes) {
            Ok(f) => Ok(self.on_frame(&f, now_us)),
            Err(e) => {
                self.decode_errors += 1;
                Err(e)
            }
        }
    }

    pub fn decode_errors(&self) -> u64 {
        self.decode_errors
    }

    /// goIds whose last frame outlived its time-to-live.
    pub fn check_stale(&self, now_us: u64) -> Vec<String> {
        let mut stale: Vec<String> = self
            .subs
            .iter()
            .filter(|(_, s)| {
                s.last_rx_us
                    .is_some_and(|rx| now_us.saturating_sub(rx) > u64::from(s.last_ttl_ms) * 1000)
            })
            .map(|(id, _)| id.clone())
            .collect();
        stale.sort();
        stale
    }
}

/// Background receive loop feeding a shared subscriber from UDP multicast.
pub struct SubscriberTask {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl SubscriberTask {
    /// `now_us` maps the receive instant to the subscriber's time base.
    pub fn spawn(
        cfg: &MulticastConfig,
        subscriber: Arc<Mutex<GooseSubscriber>>,
    ) -> std::io::Result<Self> {
        let mut rx = UdpMulticastReceiver::bind(cfg)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let origin = Instant::now();
        let handle = thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match rx.recv(Duration::from_millis(50)) {
                    Ok(Some(bytes)) => {
                        let now = origin.elapsed().as_micros() as u64;
                        let mut sub = subscriber.lock().unwrap();
                        if let Err(e) = sub.on_bytes(bytes, now) {
                            log::warn!("goose decode: {e}");
                        }
                    }
                    Ok(None) => {}
                    Err(e) => {
                        log::error!("goose receive: {e}");
                        break;
                    }
                }
            }
        });
        Ok(Self {
            stop,
            handle: Some(handle),
        })
    }
}

impl Drop for SubscriberTask {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goose::schedule::RetransmitSchedule;
    use crate::goose::transport::InProcessBus;
    use crate::goose::GoosePublisher;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn retransmissions_are_suppressed() {
        let bus = InProcessBus::new();
        let rx = bus.subscribe();
        let mut p = GoosePublisher::new(1, "inv1", RetransmitSchedule::default(), bus.sender());
        let calls = Arc::new(AtomicUsize::new(0));
        let mut sub = GooseSubscriber::new();
        let c = calls.clone();
        sub.subscribe("inv1", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
        });
        p.publish_state_change(vec![DataValue::Float32(1.5)], 0).unwrap();
        let mut t = 0;
        let mut retransmissions = 0;
        while retransmissions < 10 {
            t += 1000;
            while p.heartbeat_tick(t).unwrap().is_some() {
                retransmissions += 1;
            }
        }
        for bytes in rx.try_iter() {
            sub.on_bytes(&bytes, t).unwrap();
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn staleness_threshold() {
        let mut sub = GooseSubscriber::new();
        sub.subscribe("inv1", |_| {});
        let frame = GooseFrame {
            app_id: 1,
            go_id: "inv1".into(),
            st_num: 1,
            sq_num: 9,
            timestamp_us: 0,
            ttl_ms: 2000,
            entries: vec![],
        };
        sub.on_frame(&frame, 1_000_000);
        assert!(sub.check_stale(3_000_000).is_empty());
        assert_eq!(sub.check_stale(3_001_000), vec!["inv1".to_string()]);
    }

    #[test]
    fn unsubscribed_go_id_ignored() {
        let mut sub = GooseSubscriber::new();
        let hit = Arc::new(AtomicBool::new(false));
        let h = hit.clone();
        sub.subscribe("a", move |_| h.store(true, Ordering::SeqCst));
        let frame = GooseFrame {
            app_id: 1,
            go_id: "b".into(),
            st_num: 1,
            sq_num: 0,
            timestamp_us: 0,
            ttl_ms: 8,
            entries: vec![],
        };
        assert!(!sub.on_frame(&frame, 0));
        assert!(!hit.load(Ordering::SeqCst));
        assert!(sub.check_stale(u64::MAX).is_empty());
    }

    #[test]
    fn value_change_without_st_change_is_delivered() {
        let mut sub = GooseSubscriber::new();
        let n = Arc::new(AtomicUsize::new(0));
        let c = n.clone();
        sub.subscribe("a", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
        });
        let mut f = GooseFrame {
            app_id: 1,
            go_id: "a".into(),
            st_num: 4,
            sq_num: 0,
            timestamp_us: 0,
            ttl_ms: 8,
            entries: vec![DataValue::Int32(1)],
        };
        sub.on_frame(&f, 0);
        f.sq_num = 1;
        f.entries = vec![DataValue::Int32(2)];
        sub.on_frame(&f, 1);
        assert_eq!(n.load(Ordering::SeqCst), 2);
    }
}
