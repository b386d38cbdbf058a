//! Orchestration core for a shared software-defined-radio testbed.
//!
//! The crate is organised around the lifecycle of an experiment:
//!
//! * [`inventory`] describes the fixed pool of radios, hosts, switch ports and
//!   licensed spectrum.
//! * [`scheduler`] owns reservations: request, tentative hold, admission or
//!   administrator review, activation, completion and the post-usage survey.
//! * [`allocator`] binds admitted reservations to concrete devices, VM
//!   placements, spectrum slots and network budget.
//! * [`specvirt`] multiplexes several baseband signals into one wideband
//!   spectrum block and splits a block back into its slots.
//! * [`chanem`] turns node geometry into attenuation matrices and applies them
//!   to IQ streams.
//! * [`datamgr`] archives measurements with a configuration snapshot.

pub mod allocator;
pub mod chanem;
pub mod datamgr;
pub mod inventory;
pub mod scheduler;
pub mod specvirt;
mod types;

pub use types::{ReservationId, Timestamp, TimeWindow};
