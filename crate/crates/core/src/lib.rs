//! Simulation core of an automated UWB testbed.
//!
//! Everything here is `no_std` + `alloc` and runs on virtual time: the
//! message bus, node clocks with NTP-style discipline, DuT devices, the
//! AGV and reference system, DS-TWR ranging, the multilateration solver,
//! and the scripted measurement campaigns. IO lives in the companion
//! `testbed` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coordinator;
pub mod dut;
pub mod env;
pub mod locsolve;
pub mod msgbus;
pub mod rng;
pub mod stats;
pub mod text;
pub mod units;
pub mod uwb;
pub mod vclock;
