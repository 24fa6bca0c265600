use std::collections::HashSet;
use std::sync::mpsc::{channel, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{FrameError, GooseFrame};
use super::schedule::RetransmitSchedule;
use super::transport::{GooseTransport, TransportError};
use crate::clock::Clock;
use crate::model::{DataValue, ObjectReference, SharedModel};

#[derive(Debug, thiserror::Error)]
pub enum PublishError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// GOOSE publisher state machine. Time is passed in explicitly so the same
/// code runs against the simulation clock and the wall clock.
pub struct GoosePublisher<T> {
    app_id: u16,
    go_id: String,
    schedule: RetransmitSchedule,
    transport: T,
    st_num: u32,
    sq_num: u32,
    change_us: u64,
    next_due_us: Option<u64>,
    entries: Vec<DataValue>,
    sent: u64,
}

impl<T: GooseTransport> GoosePublisher<T> {
    pub fn new(app_id: u16, go_id: impl Into<String>, schedule: RetransmitSchedule, transport: T) -> Self {
        Self {
            app_id,
            go_id: go_id.into(),
            schedule,
            transport,
            st_num: 0,
            sq_num: 0,
            change_us: 0,
            next_due_us: None,
            entries: Vec::new(),
            sent: 0,
        }
    }

    pub fn go_id(&self) -> &str {
        &self.go_id
    }

    pub fn st_num(&self) -> u32 {
        self.st_num
    }

    pub fn entries(&self) -> &[DataValue] {
        &self.entries
    }

    /// Frames handed to the transport so far.
    pub fn frames_sent(&self) -> u64 {
        self.sent
    }

    /// When the next retransmission is due, if the publisher is active.
    pub fn next_due_us(&self) -> Option<u64> {
        self.next_due_us
    }

    fn frame(&self) -> GooseFrame {
        GooseFrame {
            app_id: self.app_id,
            go_id: self.go_id.clone(),
            st_num: self.st_num,
            sq_num: self.sq_num,
            timestamp_us: self.change_us,
            ttl_ms: self.schedule.ttl_ms(self.sq_num as usize),
            entries: self.entries.clone(),
        }
    }

    fn transmit(&mut self) -> Result<GooseFrame, PublishError> {
        let frame = self.frame();
        let bytes = frame.encode()?;
        self.transport.send(&bytes)?;
        self.sent += 1;
        Ok(frame)
    }

    /// New state: bumps stNum, restarts sqNum and the schedule, sends at once.
    pub fn publish_state_change(
        &mut self,
        entries: Vec<DataValue>,
        now_us: u64,
    ) -> Result<GooseFrame, PublishError> {
        self.st_num = self.st_num.wrapping_add(1).max(1);
        self.sq_num = 0;
        self.change_us = now_us;
        self.entries = entries;
        self.next_due_us = Some(now_us + u64::from(self.schedule.interval_ms(0)) * 1000);
        self.transmit()
    }

    /// Sends the next retransmission if it is due at `now_us`. Call
    /// repeatedly when the caller may have fallen behind several slots.
    pub fn heartbeat_tick(&mut self, now_us: u64) -> Result<Option<GooseFrame>, PublishError> {
        let Some(due) = self.next_due_us else {
            return Ok(None);
        };
        if now_us < due {
            return Ok(None);
        }
        // sqNum wraps to 1; 0 is reserved for the first transmission
        self.sq_num = self.sq_num.checked_add(1).unwrap_or(1);
        let gap = u64::from(self.schedule.interval_ms(self.sq_num as usize)) * 1000;
        self.next_due_us = Some(due + gap);
        self.transmit().map(Some)
    }

    /// Publishes a change only when `entries` differ from the current state.
    pub fn update(&mut self, entries: Vec<DataValue>, now_us: u64) -> Result<Option<GooseFrame>, PublishError> {
        let unchanged = self.next_due_us.is_some()
            && entries.len() == self.entries.len()
            && entries.iter().zip(&self.entries).all(|(a, b)| a.bit_eq(b));
        if unchanged {
            return Ok(None);
        }
        self.publish_state_change(entries, now_us).map(Some)
    }
}

/// Final part of every wait spent spinning instead of sleeping.
const SPIN_MARGIN: Duration = Duration::from_millis(1);

enum Command {
    Entries(Vec<DataValue>),
    Stop,
}

/// Handle to a publisher running on its own thread against the wall clock.
/// Dropping the handle stops the thread.
pub struct PublisherTask {
    tx: Sender<Command>,
    handle: Option<JoinHandle<()>>,
}

/// Cloneable input to a [`PublisherTask`].
#[derive(Clone)]
pub struct PublisherInput {
    tx: Sender<Command>,
}

impl PublisherInput {
    /// Returns false once the task has stopped.
    pub fn submit(&self, entries: Vec<DataValue>) -> bool {
        self.tx.send(Command::Entries(entries)).is_ok()
    }
}

impl PublisherTask {
    /// Runs `publisher`; every snapshot submitted through [`PublisherInput`]
    /// is published when it differs from the current state.
    pub fn spawn<T: GooseTransport + 'static>(
        mut publisher: GoosePublisher<T>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let (tx, rx) = channel::<Command>();
        let handle = thread::spawn(move || {
            let origin_us = clock.now_us();
            let origin = Instant::now();
            // elapsed wall time keeps the schedule monotonic even if the clock is not
            let now = || origin_us + origin.elapsed().as_micros() as u64;
            loop {
                let wait = match publisher.next_due_us() {
                    Some(due) => Duration::from_micros(due.saturating_sub(now())),
                    None => Duration::from_secs(3600),
                };
                // coarse sleep, then spin the last stretch: timed waits can
                // overshoot by milliseconds on loaded or virtualised hosts
                let coarse = wait.saturating_sub(SPIN_MARGIN);
                match rx.recv_timeout(coarse) {
                    Ok(Command::Entries(entries)) => {
                        if let Err(e) = publisher.update(entries, now()) {
                            log::error!("goose publish {}: {e}", publisher.go_id());
                        }
                        continue;
                    }
                    Ok(Command::Stop) | Err(RecvTimeoutError::Disconnected) => break,
                    Err(RecvTimeoutError::Timeout) => {}
                }
                if let Some(due) = publisher.next_due_us() {
                    while now() < due {
                        std::hint::spin_loop();
                    }
                    if let Err(e) = publisher.heartbeat_tick(now()) {
                        log::error!("goose retransmit {}: {e}", publisher.go_id());
                    }
                }
            }
        });
        Self {
            tx,
            handle: Some(handle),
        }
    }

    /// Publishes data set `dataset` of `model` whenever one of its member
    /// values changes. `None` when the data set does not exist.
    pub fn spawn_for_dataset<T: GooseTransport + 'static>(
        publisher: GoosePublisher<T>,
        model: SharedModel,
        dataset: &str,
        clock: Arc<dyn Clock>,
    ) -> Option<Self> {
        let ds = model.dataset(dataset)?;
        let members: HashSet<ObjectReference> = ds.members.iter().cloned().collect();
        let changes = model.watch();
        let snapshot = move || -> Option<Vec<DataValue>> {
            let model = model.lock();
            ds.members
                .iter()
                .map(|m| model.read(m).ok().map(|(v, _)| v))
                .collect()
        };
        let initial = snapshot()?;
        let task = Self::spawn(publisher, clock);
        let input = task.input();
        input.submit(initial);
        thread::spawn(move || {
            while let Ok(change) = changes.recv() {
                if !change.value_changed || !members.contains(&change.reference) {
                    continue;
                }
                let Some(entries) = snapshot() else { break };
                if !input.submit(entries) {
                    break;
                }
            }
        });
        Some(task)
    }

    pub fn input(&self) -> PublisherInput {
        PublisherInput {
            tx: self.tx.clone(),
        }
    }
}

impl Drop for PublisherTask {
    fn drop(&mut self) {
        let _ = self.tx.send(Command::Stop);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
