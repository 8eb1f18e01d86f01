//! Deterministic simulator for a modular, shared-queue I/O architecture.
//!
//! The model: single-purpose components (drivers, multiplexers, copiers,
//! clients) run as sequential event handlers wired together by bounded
//! single-producer single-consumer descriptor queues living in shared
//! metadata regions. Payloads live in separate data regions that queues only
//! reference by offset. Components signal each other over channels with
//! notification suppression (signal only on empty->nonempty / full->nonfull
//! transitions, gated by per-side request flags).
//!
//! Everything runs on one thread under a discrete-event scheduler with a
//! cycle-accurate cost model, so identical (scenario, seed) pairs produce
//! bit-identical reports.
//!
//! Crate layout:
//! - [`queue`]: SPSC descriptor rings and the signalling predicates.
//! - [`region`]: data regions, access-controlled views, descriptor sanitation.
//! - [`runtime`]: component abstraction, channels, event loop, accounting.
//! - [`scenario`]: declarative system descriptions (TOML) and builders.
//! - [`net`]: Ethernet device class — NIC model, driver, Tx/Rx muxes,
//!   traffic-shaping policies, copier, broadcast handling, echo client.
//! - [`storage`]: block device class — disk model with barriers, driver,
//!   partitioning mux, workload client.
//! - [`swap`]: threshold-triggered live replacement of the Tx policy.
//! - [`checker`]: exhaustive state-space verification of the signalling
//!   protocol (deadlock freedom, counterexample traces).
//! - [`bench`]: load sweeps, percentile statistics, CSV reports.

pub mod bench;
pub mod checker;
pub mod net;
pub mod queue;
pub mod region;
pub mod rng;
pub mod runtime;
pub mod scenario;
pub mod storage;
pub mod swap;
