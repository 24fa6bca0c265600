//! Client/server access to a [`ServerModel`](crate::model::ServerModel):
//! directory browsing, reads, controller-side writes and data set reports
//! over a length-prefixed binary protocol on TCP.

mod client;
pub mod protocol;
mod server;

pub use client::{AcsiClient, AcsiError, LocalAcsiClient, TcpAcsiClient};
pub use protocol::{Report, ReportControl, ReportEntry, ReportMode, Status};
pub use server::{AcsiServer, BindFailure, DEFAULT_PORT};
