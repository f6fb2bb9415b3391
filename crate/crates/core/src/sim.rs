//! In-process multi-rank harness.
//!
//! Runs one thread per rank, each with its own [`CommContext`] (and
//! therefore its own transport counters) over a shared map rooted in a
//! caller-provided directory. Because ranks only ever talk through the
//! file system, a thread per rank exercises exactly the same protocol
//! as a process per rank — including the cross-"node" copier in
//! [`TransportMode::LocalFs`] — just without fork/exec latency, which
//! makes it the workhorse for correctness tests. The process-based
//! launcher lives in [`crate::launcher`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::msgcore::RankId;
use crate::p2p::{CommContext, PollPolicy};
use crate::topology::{HostRankMap, Placement};
use crate::transport::{Copier, Transport, TransportMode};
use crate::Result;

/// A virtual cluster living under one root directory.
///
/// Node `i` is named `node<i>`; with node-private inboxes each node gets
/// `root/node<i>/`, while the shared mode keeps every rank's inbox in
/// `root/shared/`.
pub struct SimCluster {
    map: Arc<HostRankMap>,
    mode: TransportMode,
    copier: Copier,
    poll: PollPolicy,
    force_copy_fallback: bool,
}

impl SimCluster {
    /// Lay out a cluster under `root`: `ranks_per_node[i]` ranks on
    /// node `i`, ranks assigned in contiguous blocks. Creates the inbox
    /// directories.
    pub fn new(
        root: &Path,
        ranks_per_node: &[u32],
        mode: TransportMode,
        copier: Copier,
    ) -> Result<Self> {
        let mut node_of_rank = Vec::new();
        for (i, &count) in ranks_per_node.iter().enumerate() {
            node_of_rank.extend(std::iter::repeat_n(i as u32, count as usize));
        }
        Self::with_assignment(root, &node_of_rank, mode, copier)
    }

    /// Lay out a cluster under `root` with an explicit node index per
    /// rank: rank `r` lives on node `node_of_rank[r]`. Creates the
    /// inbox directories. [`SimCluster::new`] is the contiguous-block
    /// special case; this form also expresses scattered placements such
    /// as round-robin.
    pub fn with_assignment(
        root: &Path,
        node_of_rank: &[u32],
        mode: TransportMode,
        copier: Copier,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        for &node in node_of_rank {
            let msg_dir = match mode {
                TransportMode::SharedFs => root.join("shared"),
                TransportMode::LocalFs => root.join(format!("node{node}")),
            };
            fs::create_dir_all(&msg_dir)?;
            entries.push(Placement {
                node: format!("node{node}"),
                msg_dir,
            });
        }
        Ok(SimCluster {
            map: Arc::new(HostRankMap::new(entries)?),
            mode,
            copier,
            poll: PollPolicy::with_timeout(std::time::Duration::from_secs(60)),
            force_copy_fallback: false,
        })
    }

    /// Replace the per-rank polling schedule (default: standard backoff
    /// with a 60 s timeout so a deadlocked test run fails, not hangs).
    pub fn with_poll(mut self, poll: PollPolicy) -> Result<Self> {
        poll.validate()?;
        self.poll = poll;
        Ok(self)
    }

    /// Force multicast attachments to copy rather than symlink.
    pub fn with_copy_fallback(mut self, force: bool) -> Self {
        self.force_copy_fallback = force;
        self
    }

    pub fn map(&self) -> &Arc<HostRankMap> {
        &self.map
    }

    pub fn np(&self) -> u32 {
        self.map.np()
    }

    /// Build the endpoint for one rank (its own transport + counters).
    pub fn context(&self, rank: RankId) -> Result<CommContext> {
        let transport = Transport::new(self.mode, self.map.clone(), self.copier.clone())
            .with_copy_fallback(self.force_copy_fallback);
        CommContext::new(rank, transport)?.with_poll(self.poll)
    }

    /// Run `f` once per rank on `np` concurrent threads and collect the
    /// results in rank order. A panicking rank propagates its panic; an
    /// `Err` from any rank fails the whole run (first by rank order).
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&CommContext) -> Result<T> + Sync,
    {
        let np = self.map.np();
        std::thread::scope(|scope| {
            let f = &f;
            let handles: Vec<_> = (0..np)
                .map(|rank| {
                    scope.spawn(move || -> Result<T> {
                        let ctx = self.context(rank)?;
                        f(&ctx)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        })
    }

    /// Every file currently present under any inbox directory. A clean
    /// shutdown leaves this empty: all pairs consumed, nothing staged.
    pub fn residual_files(&self) -> Result<Vec<PathBuf>> {
        let mut dirs: Vec<&Path> = Vec::new();
        for rank in 0..self.map.np() {
            let d = self.map.msg_dir(rank)?;
            if !dirs.contains(&d) {
                dirs.push(d);
            }
        }
        let mut files = Vec::new();
        for dir in dirs {
            for entry in fs::read_dir(dir)? {
                files.push(entry?.path());
            }
        }
        files.sort();
        Ok(files)
    }
}

// ── Tests ────────────────────────────────────────────────────────────
