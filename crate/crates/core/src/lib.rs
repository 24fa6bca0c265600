//! Co-simulation of a residential prosumer and its flexibility chain.
//!
//! The crate wires together an IEC 61850-style device model ([`model`]), a
//! GOOSE-like state-change bus ([`goose`]), a client/server read-write-report
//! protocol ([`acsi`]), a small context broker ([`broker`]) with protocol
//! bridges ([`bridges`]), a discrete-time plant ([`plant`]), the home energy
//! management controllers ([`hems`]) and a hash-chained aggregator
//! ([`aggregator`]). [`harness`] runs complete scenarios.

pub mod acsi;
pub mod aggregator;
pub mod bridges;
pub mod broker;
pub mod clock;
pub mod goose;
pub mod harness;
pub mod hems;
pub mod model;
pub mod plant;
pub mod tlv;

pub use clock::{Clock, SimClock, SystemClock};
pub use model::{
    DataValue, FunctionalConstraint, ObjectReference, ServerModel, SharedModel, WriteChannel,
};
pub use plant::{PlantConfig, PlantState};
