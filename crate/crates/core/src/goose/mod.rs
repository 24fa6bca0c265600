//! GOOSE-style state-change messaging: frame codec, publisher state machine
//! with doubling retransmission, and a subscriber with duplicate suppression
//! and time-to-live tracking.
//!
//! Wire frame, big-endian:
//!
//! ```text
//! "GSE1" | version u8 | appId u16 | goIdLen u8 | goId | stNum u32 | sqNum u32
//!        | timestampUs u64 | ttlMs u32 | numEntries u16 | entries (TLV)*
//! ```

mod frame;
mod publisher;
mod schedule;
mod subscriber;
mod transport;

pub use frame::{decode_frame, encode_frame, FrameError, GooseFrame, MAGIC, VERSION};
pub use publisher::{GoosePublisher, PublishError, PublisherInput, PublisherTask};
pub use schedule::RetransmitSchedule;
pub use subscriber::{GooseSubscriber, SubscriberTask};
pub use transport::{
    GooseTransport, InProcessBus, InProcessSender, MulticastConfig, TransportError,
    UdpMulticastReceiver, UdpMulticastSender,
};
