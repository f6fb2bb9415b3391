//! Message buffer encoding, file naming, and atomic publication.
//!
//! Every message travels as a pair of files: a **buffer file** holding a
//! self-describing binary record, and an empty **lock file** created only
//! after the buffer is complete. Receivers poll for the lock, never the
//! buffer, so a half-written buffer is never observed. This ordering is
//! the one correctness rule the whole crate leans on.
//!
//! # Buffer layout
//!
//! All integers are little-endian. The header is exactly 30 bytes:
//!
//! ```text
//! offset  size  field
//! ------  ----  -----------------------------------------
//!      0     4  magic "FMSG"
//!      4     2  version (u16, currently 1)
//!      6     4  source rank (u32)
//!     10     4  dest rank   (u32)
//!     14     4  tag         (u32)
//!     18     8  payload_len (u64)
//!     26     4  payload_crc32 (u32, CRC-32/IEEE of payload)
//!     30     -  payload bytes
//! ```
//!
//! The checksum covers the payload only; header integrity is enforced by
//! the receiver comparing source/dest/tag against what it polled for.
//!
//! # File naming
//!
//! Point-to-point pairs are named for all three routing fields so that
//! concurrent senders and tags never collide in one directory:
//!
//! ```text
//! msg_d<dest>_s<source>_t<tag>.buf
//! msg_d<dest>_s<source>_t<tag>.lock
//! ```
//!
//! Multicast pairs are shared by every destination and carry only the
//! source and tag (receivers attach via per-member symlinks):
//!
//! ```text
//! mcast_s<source>_t<tag>.buf
//! mcast_s<source>_t<tag>.lock
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::Result;

/// Rank identifier: 0-based, dense, fixed for the life of a job.
pub type RankId = u32;

/// Message tag, chosen by the application to match sends to receives.
pub type Tag = u32;

/// First four bytes of every buffer file.
pub const MAGIC: [u8; 4] = *b"FMSG";

/// Buffer format version written by this build.
pub const VERSION: u16 = 1;

/// Size of the fixed header that precedes the payload.
pub const HEADER_LEN: usize = 30;

/// Routing fields carried in every buffer header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub source: RankId,
    pub dest: RankId,
    pub tag: Tag,
}

impl Envelope {
    pub fn new(source: RankId, dest: RankId, tag: Tag) -> Self {
        Envelope { source, dest, tag }
    }
}

// ── Encoding ─────────────────────────────────────────────────────────

/// Serialize an envelope and payload into a complete buffer image.
pub fn encode(env: &Envelope, payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&env.source.to_le_bytes());
    buf.extend_from_slice(&env.dest.to_le_bytes());
    buf.extend_from_slice(&env.tag.to_le_bytes());
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    buf.extend_from_slice(payload);
    buf
}

/// Parse and verify a buffer image, returning the envelope and payload.
///
/// Rejects buffers with the wrong magic or version, buffers whose length
/// disagrees with the recorded payload length (in either direction), and
/// payloads that fail the checksum.
pub fn decode(bytes: &[u8]) -> Result<(Envelope, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let source = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let dest = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let tag = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
    let payload_len = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
    let expected_crc = u32::from_le_bytes(bytes[26..30].try_into().unwrap());

    let expected_total = HEADER_LEN as u64 + payload_len;
    if bytes.len() as u64 != expected_total {
        return Err(Error::Truncated {
            expected: expected_total,
            actual: bytes.len() as u64,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let actual_crc = crc32fast::hash(payload);
    if actual_crc != expected_crc {
        return Err(Error::ChecksumMismatch {
            expected: expected_crc,
            actual: actual_crc,
        });
    }
    Ok((Envelope { source, dest, tag }, payload))
}

// ── File naming ──────────────────────────────────────────────────────

/// Buffer file name for a point-to-point message.
pub fn buffer_name(env: &Envelope) -> String {
    format!("msg_d{}_s{}_t{}.buf", env.dest, env.source, env.tag)
}

/// Lock file name for a point-to-point message.
pub fn lock_name(env: &Envelope) -> String {
    format!("msg_d{}_s{}_t{}.lock", env.dest, env.source, env.tag)
}

/// Buffer file name for a multicast message (shared by all members).
pub fn mcast_buffer_name(source: RankId, tag: Tag) -> String {
    format!("mcast_s{}_t{}.buf", source, tag)
}

/// Lock file name for a multicast message.
pub fn mcast_lock_name(source: RankId, tag: Tag) -> String {
    format!("mcast_s{}_t{}.lock", source, tag)
}

/// Staging name used while a file is being written, before the rename
/// that publishes it under its final name.
pub fn tmp_name(name: &str) -> String {
    format!("{name}.tmp")
}

// ── Atomic publication ───────────────────────────────────────────────

/// Write `bytes` to `dir/name` atomically: the content first lands in a
/// `.tmp` sibling, then a rename makes it visible under its final name.
/// Readers therefore see either no file or the complete file, never a
/// partial write. Returns the final path.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let tmp = dir.join(tmp_name(name));
    let fin = dir.join(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &fin)?;
    Ok(fin)
}

/// Create a zero-length lock file at `path`.
///
/// Fails with [`Error::StaleMessage`] when the lock already exists: a
/// previous message with the same routing triple has not been consumed,
/// and overwriting it would corrupt the unread message.
pub fn create_lock(path: &Path, env: &Envelope) -> Result<()> {
    match fs::OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(_) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::StaleMessage {
            dest: env.dest,
            sender: env.source,
            tag: env.tag,
        }),
        Err(e) => Err(e.into()),
    }
}

// ── Tests ────────────────────────────────────────────────────────────
