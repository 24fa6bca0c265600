//! Community coordinator: hash-chained ledger of capacity reports, setpoint
//! dispatches and measurements, the community profile, and capacity-aware
//! allocation of the needed counteraction.

mod allocation;
mod coordinator;
pub mod ledger;
mod rec;

pub use allocation::{allocate_setpoints, collect_capacities, dispatch, AllocationError, Capacity};
pub use coordinator::{dispatch_time_s, Aggregator, AggregatorError, PeerConfig, ProsumerNode};
pub use ledger::{
    parse_log, verify_chain, verify_log, Block, Chain, Hash, LedgerError, Tx, VerifyFailure, ZERO_HASH,
};
pub use rec::{
    read_rec_csv, read_rec_file, rec_profile_synth, RecProfile, RecSynthError, RecSynthParams, INTERVAL_S,
};
