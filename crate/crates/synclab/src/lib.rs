//! A deterministic discrete-event laboratory for multi-device sync.
//!
//! Replicas with skewed wall clocks edit documents and mailboxes, a star
//! network relays their operations through one server, and pluggable
//! conflict-resolution strategies decide what survives. Detectors then
//! compare what the strategies produced against the ground-truth causal
//! graph, reporting silent deletions, phantom messages, lost read states,
//! missing moves, stuck synchronization, and causal inversions, and
//! classify each run against the four-condition forward-in-time-only
//! failure pattern.

pub mod cli;
pub mod clock;
pub mod detect;
pub mod oplog;
pub mod oracle;
pub mod replica;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod strategy;
pub mod testkit;
