//! Deterministic simulation of a locally differentially private telemetry
//! daemon: per-datum randomizers built on a biased coin, a replenishing
//! privacy-budget ledger, budget-constrained report generation on a virtual
//! clock, retention maintenance, and a loss auditor that bounds and tallies
//! the privacy loss the configuration permits.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO; timestamps are
//! integer seconds on a virtual clock and all randomness flows through
//! seeded [`rng::RandomSource`] streams, so every run is replayable
//! byte-for-byte. File formats, persistence, and the command-line driver
//! live in the companion `ldpd` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod auditor;
pub mod collector;
pub mod config;
pub mod daemon;
pub mod privatizer;
pub mod report;
pub mod rng;
pub mod store;
pub mod testkit;

pub use config::{Algorithm, ConfigBundle, ConfigError, ResolvedKey};
pub use daemon::{Pipeline, PipelineOptions, PipelineState, Task};
pub use rng::RandomSource;
pub use store::{EventDatum, EventOutcome, Store};
