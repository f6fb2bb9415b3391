//! Crate-wide error type.
//!
//! Everything that can go wrong in the messaging stack funnels into one
//! enum so callers match on a single type. Variants carry enough context
//! to diagnose a failure from the error alone (expected/actual values,
//! offending line numbers, rank ids) because by the time a polling
//! receiver fails there is often nothing else left on disk to inspect.

use std::time::Duration;

use thiserror::Error;

use crate::msgcore::{RankId, Tag};

/// Unified error for encoding, topology, transport, and launch failures.
#[derive(Debug, Error)]
pub enum Error {
    // ── Buffer encoding ──────────────────────────────────────────────

    /// Buffer does not start with the `FMSG` magic.
    #[error("bad magic: not a message buffer")]
    BadMagic,

    /// Buffer claims a format version this build does not understand.
    #[error("unsupported buffer version {0}")]
    UnsupportedVersion(u16),

    /// Buffer is shorter than its header says it should be.
    #[error("truncated buffer: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },

    /// Payload bytes do not match the checksum recorded in the header.
    #[error("payload checksum mismatch: header says {expected:#010x}, computed {actual:#010x}")]
    ChecksumMismatch { expected: u32, actual: u32 },

    /// Decoded header fields disagree with what the receiver asked for.
    #[error(
        "header mismatch: expected source {want_source}, dest {want_dest}, tag {want_tag}; \
         buffer says source {got_source}, dest {got_dest}, tag {got_tag}"
    )]
    HeaderMismatch {
        want_source: RankId,
        want_dest: RankId,
        want_tag: Tag,
        got_source: RankId,
        got_dest: RankId,
        got_tag: Tag,
    },

    // ── Topology ─────────────────────────────────────────────────────

    /// A line of a host map file could not be parsed.
    #[error("host map line {line}: {reason}")]
    MapParse { line: usize, reason: String },

    /// Ranks in a host map are not exactly 0..np.
    #[error("host map ranks are not contiguous from zero")]
    GapInRanks,

    /// The same rank appears twice in a host map.
    #[error("duplicate rank {0} in host map")]
    DuplicateRank(RankId),

    /// A rank id is outside the job size.
    #[error("rank {rank} out of range for np {np}")]
    RankOutOfRange { rank: RankId, np: u32 },

    /// A node name does not appear in the host map.
    #[error("unknown node {0:?}")]
    UnknownNode(String),

    // ── Transport / point-to-point ───────────────────────────────────

    /// A previous message with the same (dest, sender, tag) is still
    /// unconsumed; sending again would clobber it.
    #[error("stale message for dest {dest}, source {sender}, tag {tag} still on disk")]
    StaleMessage { dest: RankId, sender: RankId, tag: Tag },

    /// The inter-node copier failed.
    #[error("copy failed: {0}")]
    CopyFailed(String),

    /// A blocking operation gave up after its timeout.
    #[error("timed out after {0:?}")]
    Timeout(Duration),

    // ── Collectives ──────────────────────────────────────────────────

    /// A distributed array's segment lengths do not match the block
    /// distribution implied by (total length, np).
    #[error("shape mismatch: expected segment of {expected} elements, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// A received payload decoded cleanly but does not contain the
    /// bytes the receiver expected end to end.
    #[error("payload verification failed: {0}")]
    PayloadVerification(String),

    // ── Launcher ─────────────────────────────────────────────────────

    /// A job description failed validation before launch.
    #[error("invalid job spec: {0}")]
    InvalidJobSpec(String),

    /// A launched job ran but did not succeed (nonzero exits, killed
    /// ranks, or unusable results).
    #[error("job failed: {0}")]
    JobFailed(String),

    /// A rank process could not be started.
    #[error("failed to spawn rank {rank}: {reason}")]
    SpawnFailed { rank: RankId, reason: String },

    /// A polling policy has a zero or inverted interval range.
    #[error("invalid poll policy: intervals must be nonzero and initial <= max")]
    InvalidPollPolicy,

    // ── Pass-through ─────────────────────────────────────────────────

    /// Underlying file system error.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
