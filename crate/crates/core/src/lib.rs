// SPDX-License-Identifier: Apache-2.0

//! Discrete-event simulation of EVPN designated forwarder (DF) selection in a
//! multi-homed leaf-spine data center.
//!
//! The crate is `no_std` (it only needs `alloc`). It models three ways of
//! moving the DF role between provider edge routers:
//!
//! - distributed service carving (`V mod N` election driven by per-PE timers),
//! - a handshake variant that blocks the old DF before the new one unblocks,
//! - a central controller that picks the multicast tree with the lowest link
//!   utilization and commands PEs over an out-of-band channel.
//!
//! File formats, result output and the command-line runner live in the `dfsim`
//! crate.

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod controller;
pub mod election;
pub mod engine;
mod error;
pub mod invariants;
pub mod scenario;
pub mod time;
pub mod topology;
pub mod traffic;

pub use error::Error;
pub use time::SimTime;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;
