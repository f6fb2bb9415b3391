//! Blocking point-to-point operations: send, receive, probe.
//!
//! Receiving is pure polling: the receiver watches for the lock file of
//! the (source, dest, tag) triple it wants, with geometric backoff
//! between checks so an idle wait costs little CPU while a hot exchange
//! stays fast. Once the lock appears the buffer is guaranteed complete,
//! so the receiver reads it, verifies the header and checksum, deletes
//! the pair, and returns the payload.
//!
//! Sends never block on the receiver: a send returns as soon as the
//! pair is published (and, for cross-node sends, copied). The only
//! backpressure is [`Error::StaleMessage`] when the same routing triple
//! is sent twice without being consumed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::Error;
use crate::msgcore::{self, Envelope, RankId, Tag};
use crate::transport::{Transport, TransportStats};
use crate::Result;

/// Polling schedule for blocking receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollPolicy {
    /// Delay after the first miss.
    pub initial: Duration,
    /// Multiplier applied after each miss.
    pub backoff: f64,
    /// Ceiling on the delay between checks.
    pub max_interval: Duration,
    /// Give up after this long; `None` waits forever.
    pub timeout: Option<Duration>,
}

impl Default for PollPolicy {
    /// 1 ms initial, doubling to a 100 ms ceiling, no timeout.
    fn default() -> Self {
        PollPolicy {
            initial: Duration::from_millis(1),
            backoff: 2.0,
            max_interval: Duration::from_millis(100),
            timeout: None,
        }
    }
}

impl PollPolicy {
    /// Default schedule with a bound, for callers that must not hang.
    pub fn with_timeout(timeout: Duration) -> Self {
        PollPolicy {
            timeout: Some(timeout),
            ..PollPolicy::default()
        }
    }

    /// Reject zero or inverted intervals and sub-unity backoff.
    pub fn validate(&self) -> Result<()> {
        if self.initial.is_zero() || self.max_interval < self.initial || self.backoff < 1.0 {
            return Err(Error::InvalidPollPolicy);
        }
        Ok(())
    }
}

/// Block until `path` exists, sleeping per `poll` between checks.
///
/// The first check is immediate, and each sleep is clipped to the time
/// remaining before the deadline, so a timeout overshoots by scheduling
/// jitter only — not by up to one backoff interval.
pub(crate) fn wait_for(path: &Path, poll: &PollPolicy) -> Result<()> {
    let start = Instant::now();
    let mut interval = poll.initial;
    loop {
        if path.exists() {
            return Ok(());
        }
        match poll.timeout {
            Some(limit) => {
                let elapsed = start.elapsed();
                if elapsed >= limit {
                    return Err(Error::Timeout(limit));
                }
                std::thread::sleep(interval.min(limit - elapsed));
            }
            None => std::thread::sleep(interval),
        }
        interval = interval.mul_f64(poll.backoff).min(poll.max_interval);
    }
}

/// One rank's endpoint: identity, transport, and polling schedule.
pub struct CommContext {
    rank: RankId,
    transport: Transport,
    poll: PollPolicy,
    keep_consumed: bool,
}

impl CommContext {
    /// Create the endpoint for `rank`. The rank must exist in the
    /// transport's map.
    pub fn new(rank: RankId, transport: Transport) -> Result<Self> {
        transport.map().node_of(rank)?; // validates the rank
        Ok(CommContext {
            rank,
            transport,
            poll: PollPolicy::default(),
            keep_consumed: false,
        })
    }

    /// Replace the polling schedule (validated).
    pub fn with_poll(mut self, poll: PollPolicy) -> Result<Self> {
        poll.validate()?;
        self.poll = poll;
        Ok(self)
    }

    /// Keep consumed pairs beside the inbox (renamed with a `.done`
    /// suffix) instead of deleting them. Debugging aid.
    pub fn with_keep_consumed(mut self, keep: bool) -> Self {
        self.keep_consumed = keep;
        self
    }

    pub fn rank(&self) -> RankId {
        self.rank
    }

    pub fn np(&self) -> u32 {
        self.transport.map().np()
    }

    pub fn poll(&self) -> &PollPolicy {
        &self.poll
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn stats(&self) -> TransportStats {
        self.transport.stats()
    }

    /// This rank's inbox directory.
    pub fn inbox(&self) -> Result<&Path> {
        self.transport.map().msg_dir(self.rank)
    }

    // ── Operations ───────────────────────────────────────────────────

    /// Send `payload` to `dest` under `tag`. Returns once the pair is
    /// visible at the destination (copied, for cross-node sends).
    pub fn send(&self, dest: RankId, tag: Tag, payload: &[u8]) -> Result<()> {
        let env = Envelope::new(self.rank, dest, tag);
        self.transport.publish(&env, payload)
    }

    /// Block until the message from `source` under `tag` arrives, then
    /// verify, consume, and return its payload.
    pub fn recv(&self, source: RankId, tag: Tag) -> Result<Vec<u8>> {
        let env = Envelope::new(source, self.rank, tag);
        let dir = self.transport.map().msg_dir(self.rank)?;
        let lock_path = dir.join(msgcore::lock_name(&env));
        let buf_path = dir.join(msgcore::buffer_name(&env));

        wait_for(&lock_path, &self.poll)?;
        let bytes = fs::read(&buf_path)?;
        let (got, payload) = msgcore::decode(&bytes)?;
        if got != env {
            return Err(Error::HeaderMismatch {
                want_source: env.source,
                want_dest: env.dest,
                want_tag: env.tag,
                got_source: got.source,
                got_dest: got.dest,
                got_tag: got.tag,
            });
        }
        let payload = payload.to_vec();
        self.consume_pair(&lock_path, &buf_path)?;
        Ok(payload)
    }

    /// Whether a message from `source` under `tag` is ready. Never
    /// consumes and never blocks.
    pub fn probe(&self, source: RankId, tag: Tag) -> Result<bool> {
        let env = Envelope::new(source, self.rank, tag);
        let dir = self.transport.map().msg_dir(self.rank)?;
        Ok(dir.join(msgcore::lock_name(&env)).exists())
    }

    /// Remove a consumed pair, lock first so a crash mid-consume leaves
    /// a lockless (hence invisible) buffer rather than a dangling lock.
    pub(crate) fn consume_pair(&self, lock_path: &Path, buf_path: &Path) -> Result<()> {
        if self.keep_consumed {
            rename_done(lock_path)?;
            rename_done(buf_path)?;
        } else {
            fs::remove_file(lock_path)?;
            fs::remove_file(buf_path)?;
        }
        Ok(())
    }
}

fn rename_done(path: &Path) -> Result<()> {
    let mut name = path.file_name().unwrap().to_os_string();
    name.push(".done");
    let target: PathBuf = path.with_file_name(name);
    fs::rename(path, target)?;
    Ok(())
}

// ── Tests ────────────────────────────────────────────────────────────
