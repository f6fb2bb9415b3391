//! Delivery of buffer/lock pairs between ranks.
//!
//! Two modes share one interface:
//!
//! * [`TransportMode::SharedFs`] — every rank's inbox directory lives on
//!   one shared file system (e.g. a cluster-wide parallel store). A send
//!   is two local file operations; the copier is never invoked.
//! * [`TransportMode::LocalFs`] — each node owns a private inbox
//!   directory, and messages that cross a node boundary are moved by an
//!   explicit [`Copier`]. This trades copier overhead for local-disk
//!   write speed and avoids hammering one shared directory.
//!
//! A cross-node transfer always makes **two** copier calls, buffer first
//! and lock second, preserving the publish ordering end to end: the
//! remote lock cannot exist until the remote buffer is complete.
//!
//! Remote sends are staged: the sender writes the pair into its own
//! inbox directory under the destination's file names, copies both files
//! out, then removes the staging pair. Stale-message detection (an
//! unconsumed lock with the same routing triple) therefore happens at
//! the staging site; a stale pair on the remote side is overwritten,
//! exactly as a remote copy tool would.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::error::Error;
use crate::msgcore::{self, Envelope};
use crate::topology::HostRankMap;
use crate::Result;

/// How inbox directories are shared between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    /// All inbox directories are visible to all ranks; no copying.
    SharedFs,
    /// Inbox directories are node-private; cross-node messages are
    /// moved by the copier.
    LocalFs,
}

/// Moves one file to another node's file system.
#[derive(Debug, Clone)]
pub enum Copier {
    /// Shell out to `scp` in batch mode (`-B`, never prompts) with a
    /// bounded connect timeout. The node name is the ssh target.
    Scp { connect_timeout_s: u32 },
    /// In-process copy for single-machine runs and tests: the "remote"
    /// path is local, and each call sleeps to model per-file latency
    /// plus an optional bandwidth cap.
    Loopback {
        latency: Duration,
        bandwidth_bytes_per_s: Option<u64>,
    },
}

/// Argument vector for an scp invocation, split out for testability.
fn scp_args(connect_timeout_s: u32, local: &Path, node: &str, remote: &Path) -> Vec<String> {
    vec![
        "-B".to_string(),
        "-o".to_string(),
        format!("ConnectTimeout={connect_timeout_s}"),
        local.display().to_string(),
        format!("{node}:{}", remote.display()),
    ]
}

impl Copier {
    /// Copy `local` to `remote` on `node`. Blocking; returns once the
    /// destination file is complete.
    fn copy(&self, local: &Path, node: &str, remote: &Path) -> Result<()> {
        match self {
            Copier::Scp { connect_timeout_s } => {
                let args = scp_args(*connect_timeout_s, local, node, remote);
                let output = Command::new("scp")
                    .args(&args)
                    .output()
                    .map_err(|e| Error::CopyFailed(format!("failed to run scp: {e}")))?;
                if !output.status.success() {
                    return Err(Error::CopyFailed(format!(
                        "scp {} exited with {}: {}",
                        args.join(" "),
                        output.status,
                        String::from_utf8_lossy(&output.stderr).trim()
                    )));
                }
                Ok(())
            }
            Copier::Loopback {
                latency,
                bandwidth_bytes_per_s,
            } => {
                let len = fs::metadata(local)?.len();
                let mut delay = *latency;
                if let Some(bw) = bandwidth_bytes_per_s {
                    if *bw > 0 {
                        delay += Duration::from_secs_f64(len as f64 / *bw as f64);
                    }
                }
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                if let Some(parent) = remote.parent() {
                    fs::create_dir_all(parent)?;
                }
                // Copy via a staging name so a concurrent poller never
                // reads a half-copied file, mirroring the publish rule.
                let tmp = remote.with_extension("copytmp");
                fs::copy(local, &tmp)?;
                fs::rename(&tmp, remote)?;
                Ok(())
            }
        }
    }
}

/// Snapshot of a transport's activity counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    /// Buffers written by this transport (one per send/multicast root).
    pub publishes: u64,
    /// Copier invocations (each buffer and each lock counts as one).
    pub remote_copies: u64,
    /// Payload-file bytes moved by the copier (locks are zero-length).
    pub bytes_copied: u64,
    /// Multicast attachments that fell back from symlink to full copy.
    pub symlink_fallbacks: u64,
}

/// One rank's delivery engine: mode + map + copier + counters.
///
/// Counters are atomic so a transport can be shared across helper
/// threads; each rank normally owns its own transport, making the
/// counters per-rank measurements.
#[derive(Debug)]
pub struct Transport {
    mode: TransportMode,
    map: Arc<HostRankMap>,
    copier: Copier,
    force_copy_fallback: bool,
    publishes: AtomicU64,
    remote_copies: AtomicU64,
    bytes_copied: AtomicU64,
    symlink_fallbacks: AtomicU64,
}

impl Transport {
    pub fn new(mode: TransportMode, map: Arc<HostRankMap>, copier: Copier) -> Self {
        Transport {
            mode,
            map,
            copier,
            force_copy_fallback: false,
            publishes: AtomicU64::new(0),
            remote_copies: AtomicU64::new(0),
            bytes_copied: AtomicU64::new(0),
            symlink_fallbacks: AtomicU64::new(0),
        }
    }

    /// Force multicast attachment to copy instead of symlink, as on
    /// file systems without symlink support.
    pub fn with_copy_fallback(mut self, force: bool) -> Self {
        self.force_copy_fallback = force;
        self
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    pub fn map(&self) -> &Arc<HostRankMap> {
        &self.map
    }

    pub fn stats(&self) -> TransportStats {
        TransportStats {
            publishes: self.publishes.load(Ordering::Relaxed),
            remote_copies: self.remote_copies.load(Ordering::Relaxed),
            bytes_copied: self.bytes_copied.load(Ordering::Relaxed),
            symlink_fallbacks: self.symlink_fallbacks.load(Ordering::Relaxed),
        }
    }

    /// Whether messages between the two ranks stay on one file system
    /// (shared mode, or both ranks on one node).
    pub fn is_local(&self, a: u32, b: u32) -> Result<bool> {
        match self.mode {
            TransportMode::SharedFs => {
                // Validate the ranks even though the answer is fixed.
                self.map.node_of(a)?;
                self.map.node_of(b)?;
                Ok(true)
            }
            TransportMode::LocalFs => self.map.colocated(a, b),
        }
    }

    /// Point-to-point publish: make the buffer/lock pair appear in the
    /// destination's inbox directory, buffer strictly before lock.
    pub fn publish(&self, env: &Envelope, payload: &[u8]) -> Result<()> {
        let buf_name = msgcore::buffer_name(env);
        let lock_name = msgcore::lock_name(env);
        let bytes = msgcore::encode(env, payload);

        if self.is_local(env.source, env.dest)? {
            // Same file system: write in place.
            let dest_dir = self.map.msg_dir(env.dest)?;
            fs::create_dir_all(dest_dir)?;
            msgcore::write_atomic(dest_dir, &buf_name, &bytes)?;
            msgcore::create_lock(&dest_dir.join(&lock_name), env)?;
        } else {
            // Stage locally under the final names, then copy out.
            let stage_dir = self.map.msg_dir(env.source)?;
            fs::create_dir_all(stage_dir)?;
            let staged_buf = msgcore::write_atomic(stage_dir, &buf_name, &bytes)?;
            let staged_lock = stage_dir.join(&lock_name);
            msgcore::create_lock(&staged_lock, env)?;

            let dest_node = self.map.node_of(env.dest)?.to_string();
            let dest_dir = self.map.msg_dir(env.dest)?.to_path_buf();
            let result = self.transfer_pair(&staged_buf, &staged_lock, &dest_node, &dest_dir);
            // The staging pair must not linger either way: on success it
            // is garbage, on failure it must not look like a real inbound
            // message to our own node.
            let _ = fs::remove_file(&staged_lock);
            let _ = fs::remove_file(&staged_buf);
            result?;
        }
        self.publishes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Copy a staged buffer/lock pair to another node, buffer first.
    /// Two copier calls, counted individually.
    pub(crate) fn transfer_pair(
        &self,
        local_buf: &Path,
        local_lock: &Path,
        dest_node: &str,
        dest_dir: &Path,
    ) -> Result<()> {
        let remote_buf = dest_dir.join(local_buf.file_name().unwrap());
        let remote_lock = dest_dir.join(local_lock.file_name().unwrap());
        let buf_len = fs::metadata(local_buf)?.len();

        self.copier.copy(local_buf, dest_node, &remote_buf)?;
        self.remote_copies.fetch_add(1, Ordering::Relaxed);
        self.bytes_copied.fetch_add(buf_len, Ordering::Relaxed);

        self.copier.copy(local_lock, dest_node, &remote_lock)?;
        self.remote_copies.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Attach `link` to `original`, preferring a symlink and falling
    /// back to a full copy where symlinks are unavailable. Multicast
    /// uses this to give N local members one shared buffer.
    pub(crate) fn link_or_copy(&self, original: &Path, link: &Path) -> Result<()> {
        if !self.force_copy_fallback {
            match std::os::unix::fs::symlink(original, link) {
                Ok(()) => return Ok(()),
                Err(e) if e.kind() == std::io::ErrorKind::Unsupported => {}
                Err(e) => return Err(e.into()),
            }
        }
        fs::copy(original, link)?;
        self.symlink_fallbacks.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Bump the publish counter for a buffer written outside
    /// [`Transport::publish`] (the multicast root writes its one real
    /// buffer directly).
    pub(crate) fn note_publish(&self) {
        self.publishes.fetch_add(1, Ordering::Relaxed);
    }
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Placement;
    use std::time::Instant;

    fn map_two_nodes(root: &Path) -> Arc<HostRankMap> {
        let mk = |n: &str| Placement {
            node: n.to_string(),
            msg_dir: root.join(n),
        };
        Arc::new(HostRankMap::new(vec![mk("n0"), mk("n0"), mk("n1"), mk("n1")]).unwrap())
    }

    fn instant_loopback() -> Copier {
        Copier::Loopback {
            latency: Duration::ZERO,
            bandwidth_bytes_per_s: None,
        }
    }

    #[test]
    fn scp_invocation_is_batch_mode_with_connect_timeout() {
        let args = scp_args(10, Path::new("/tmp/m.buf"), "node7", Path::new("/inbox/m.buf"));
        assert_eq!(
            args,
            vec!["-B", "-o", "ConnectTimeout=10", "/tmp/m.buf", "node7:/inbox/m.buf"]
        );
    }

    #[test]
    fn shared_mode_publishes_without_copier() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(TransportMode::SharedFs, map.clone(), instant_loopback());

        let env = Envelope::new(0, 2, 5); // cross-node ranks
        t.publish(&env, b"payload").unwrap();

        let inbox = map.msg_dir(2).unwrap();
        assert!(inbox.join(msgcore::buffer_name(&env)).exists());
        assert!(inbox.join(msgcore::lock_name(&env)).exists());
        let stats = t.stats();
        assert_eq!(stats.publishes, 1);
        assert_eq!(stats.remote_copies, 0);
        assert_eq!(stats.bytes_copied, 0);
    }

    #[test]
    fn local_mode_same_node_skips_copier() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(TransportMode::LocalFs, map.clone(), instant_loopback());

        let env = Envelope::new(0, 1, 9);
        t.publish(&env, b"hi").unwrap();
        assert!(map.msg_dir(1).unwrap().join(msgcore::lock_name(&env)).exists());
        assert_eq!(t.stats().remote_copies, 0);
    }

    #[test]
    fn local_mode_cross_node_copies_pair_and_cleans_staging() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(TransportMode::LocalFs, map.clone(), instant_loopback());

        let env = Envelope::new(1, 2, 3);
        let payload = b"cross-node payload".to_vec();
        t.publish(&env, &payload).unwrap();

        // Pair arrived at the destination inbox and decodes cleanly.
        let inbox = map.msg_dir(2).unwrap();
        let bytes = fs::read(inbox.join(msgcore::buffer_name(&env))).unwrap();
        let (got_env, got_payload) = msgcore::decode(&bytes).unwrap();
        assert_eq!(got_env, env);
        assert_eq!(got_payload, &payload[..]);
        assert!(inbox.join(msgcore::lock_name(&env)).exists());

        // Nothing staged remains in the sender's inbox.
        let staged: Vec<_> = fs::read_dir(map.msg_dir(1).unwrap())
            .unwrap()
            .collect();
        assert!(staged.is_empty(), "staging files left behind: {staged:?}");

        // One buffer copy + one lock copy; bytes count the buffer file.
        let stats = t.stats();
        assert_eq!(stats.remote_copies, 2);
        assert_eq!(
            stats.bytes_copied,
            (msgcore::HEADER_LEN + payload.len()) as u64
        );
    }

    #[test]
    fn unconsumed_message_blocks_resend() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(TransportMode::SharedFs, map, instant_loopback());

        let env = Envelope::new(0, 1, 7);
        t.publish(&env, b"first").unwrap();
        match t.publish(&env, b"second") {
            Err(Error::StaleMessage { dest, sender, tag }) => {
                assert_eq!((dest, sender, tag), (1, 0, 7));
            }
            other => panic!("expected StaleMessage, got {other:?}"),
        }
    }

    #[test]
    fn loopback_latency_applies_per_copier_call() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(
            TransportMode::LocalFs,
            map,
            Copier::Loopback {
                latency: Duration::from_millis(20),
                bandwidth_bytes_per_s: None,
            },
        );
        let start = Instant::now();
        t.publish(&Envelope::new(0, 2, 1), b"x").unwrap();
        // Two copier calls (buffer, lock) at 20 ms each.
        assert!(start.elapsed() >= Duration::from_millis(40));
    }

    #[test]
    fn loopback_bandwidth_cap_scales_with_size() {
        let dir = tempfile::tempdir().unwrap();
        let copier = Copier::Loopback {
            latency: Duration::ZERO,
            bandwidth_bytes_per_s: Some(10_000),
        };
        let src = dir.path().join("src.bin");
        fs::write(&src, vec![0u8; 1_000]).unwrap(); // 1000 B / 10 kB/s = 100 ms
        let start = Instant::now();
        copier.copy(&src, "ignored", &dir.path().join("dst.bin")).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(100));
    }

    #[test]
    fn forced_copy_fallback_counts_and_duplicates_content() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(TransportMode::SharedFs, map, instant_loopback())
            .with_copy_fallback(true);

        let original = dir.path().join("real.buf");
        fs::write(&original, b"shared payload").unwrap();
        let link = dir.path().join("member.buf");
        t.link_or_copy(&original, &link).unwrap();

        assert_eq!(fs::read(&link).unwrap(), b"shared payload");
        assert!(!fs::symlink_metadata(&link).unwrap().file_type().is_symlink());
        assert_eq!(t.stats().symlink_fallbacks, 1);
    }

    #[test]
    fn default_attach_is_symlink() {
        let dir = tempfile::tempdir().unwrap();
        let map = map_two_nodes(dir.path());
        let t = Transport::new(TransportMode::SharedFs, map, instant_loopback());

        let original = dir.path().join("real.buf");
        fs::write(&original, b"abc").unwrap();
        let link = dir.path().join("alias.buf");
        t.link_or_copy(&original, &link).unwrap();

        assert!(fs::symlink_metadata(&link).unwrap().file_type().is_symlink());
        assert_eq!(fs::read(&link).unwrap(), b"abc"); // reads through
        assert_eq!(t.stats().symlink_fallbacks, 0);
    }
}
