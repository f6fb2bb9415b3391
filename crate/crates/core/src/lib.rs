//! File-based message passing for parallel programs.
//!
//! Processes communicate exclusively through the file system: a sender
//! writes a *buffer file* containing the payload, then creates a *lock
//! file* next to it. The lock file is the visibility barrier — it is
//! created only after the buffer is complete, so a receiver that polls
//! for the lock never observes a partial message. No daemons, sockets,
//! or message brokers are involved; any shared or copyable file system
//! is a transport.
//!
//! The crate is organized bottom-up:
//!
//! * [`msgcore`] — buffer encoding (header + CRC) and file naming
//! * [`topology`] — the rank-to-node map and its on-disk format
//! * [`transport`] — shared-directory and per-node-inbox delivery,
//!   including the file copier used to cross node boundaries
//! * [`p2p`] — blocking send/recv/probe built on polling for locks
//! * [`collectives`] — node-aware broadcast and binomial-tree
//!   aggregation, split into pure planners and executors
//! * [`launcher`] — spawns one process per rank across virtual nodes
//! * [`sim`] — in-process multi-rank harness for tests and benchmarks

pub mod collectives;
pub mod error;
pub mod launcher;
pub mod msgcore;
pub mod p2p;
pub mod sim;
pub mod topology;
pub mod transport;

pub use collectives::{agg, bcast_central, bcast_node_aware, plan_agg, plan_node_aware};
pub use error::Error;
pub use msgcore::{Envelope, RankId, Tag};
pub use p2p::{CommContext, PollPolicy};
pub use topology::{HostRankMap, NodeId};
pub use transport::{Copier, Transport, TransportMode, TransportStats};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
