//! Host-to-rank map: which node runs each rank, and where that rank's
//! inbox directory lives.
//!
//! The map is the single source of truth for message routing. Senders
//! consult it to decide whether a destination is on the same node (plain
//! file create) or a remote one (file copy), and the collectives use it
//! to pick per-node leaders so that each payload crosses the network at
//! most once per node.
//!
//! # On-disk format
//!
//! One line per rank, whitespace-separated, in any order:
//!
//! ```text
//! <rank> <node> <msg_dir>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Ranks must be
//! exactly `0..np` with no gaps or duplicates. Directory paths may not
//! contain whitespace.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::msgcore::RankId;
use crate::Result;

/// Node name. Purely symbolic on a shared file system; for per-node
/// inboxes it doubles as the copier's target host.
pub type NodeId = String;

/// One rank's placement: the node it runs on and its inbox directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub node: NodeId,
    pub msg_dir: PathBuf,
}

/// Immutable rank-to-node map for one job, indexed by rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRankMap {
    entries: Vec<Placement>,
}

impl HostRankMap {
    /// Build a map from per-rank placements (index = rank).
    pub fn new(entries: Vec<Placement>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::MapParse {
                line: 0,
                reason: "empty host map".into(),
            });
        }
        Ok(HostRankMap { entries })
    }

    /// Parse the text format. Lines may appear in any order; ranks must
    /// cover `0..np` exactly.
    pub fn parse(text: &str) -> Result<Self> {
        let mut by_rank: HashMap<RankId, Placement> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let rank: RankId = fields
                .next()
                .unwrap() // non-empty after trim
                .parse()
                .map_err(|e| Error::MapParse {
                    line,
                    reason: format!("bad rank: {e}"),
                })?;
            let node = fields.next().ok_or_else(|| Error::MapParse {
                line,
                reason: "missing node field".into(),
            })?;
            let msg_dir = fields.next().ok_or_else(|| Error::MapParse {
                line,
                reason: "missing msg_dir field".into(),
            })?;
            if fields.next().is_some() {
                return Err(Error::MapParse {
                    line,
                    reason: "trailing fields after msg_dir".into(),
                });
            }
            let placement = Placement {
                node: node.to_string(),
                msg_dir: PathBuf::from(msg_dir),
            };
            if by_rank.insert(rank, placement).is_some() {
                return Err(Error::DuplicateRank(rank));
            }
        }
        if by_rank.is_empty() {
            return Err(Error::MapParse {
                line: 0,
                reason: "empty host map".into(),
            });
        }
        let np = by_rank.len() as RankId;
        let mut entries = Vec::with_capacity(np as usize);
        for rank in 0..np {
            match by_rank.remove(&rank) {
                Some(p) => entries.push(p),
                None => return Err(Error::GapInRanks),
            }
        }
        Ok(HostRankMap { entries })
    }

    /// Read and parse a map file.
    pub fn read_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Render the text format, one rank per line in rank order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (rank, p) in self.entries.iter().enumerate() {
            writeln!(out, "{} {} {}", rank, p.node, p.msg_dir.display()).unwrap();
        }
        out
    }

    /// Write the text format to a file.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    // ── Queries ──────────────────────────────────────────────────────

    /// Number of ranks in the job.
    pub fn np(&self) -> u32 {
        self.entries.len() as u32
    }

    fn placement(&self, rank: RankId) -> Result<&Placement> {
        self.entries
            .get(rank as usize)
            .ok_or(Error::RankOutOfRange { rank, np: self.np() })
    }

    /// Node a rank runs on.
    pub fn node_of(&self, rank: RankId) -> Result<&str> {
        Ok(&self.placement(rank)?.node)
    }

    /// Inbox directory where messages *to* `rank` are placed.
    pub fn msg_dir(&self, rank: RankId) -> Result<&Path> {
        Ok(&self.placement(rank)?.msg_dir)
    }

    /// Whether two ranks share a node (always true for a rank and itself).
    pub fn colocated(&self, a: RankId, b: RankId) -> Result<bool> {
        Ok(self.node_of(a)? == self.node_of(b)?)
    }

    /// Lowest rank on the given node — its leader.
    pub fn leader_of_node(&self, node: &str) -> Result<RankId> {
        self.entries
            .iter()
            .position(|p| p.node == node)
            .map(|i| i as RankId)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    /// Leader of the node that `rank` runs on.
    pub fn leader_of(&self, rank: RankId) -> Result<RankId> {
        self.leader_of_node(self.node_of(rank)?)
    }

    /// Whether `rank` is the lowest rank on its node.
    pub fn is_leader(&self, rank: RankId) -> Result<bool> {
        Ok(self.leader_of(rank)? == rank)
    }

    /// All ranks on the same node as `rank`, ascending, including `rank`.
    pub fn node_peers(&self, rank: RankId) -> Result<Vec<RankId>> {
        let node = self.node_of(rank)?;
        Ok(self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, p)| p.node == node)
            .map(|(i, _)| i as RankId)
            .collect())
    }

    /// Distinct node names, in order of first appearance by rank.
    pub fn nodes(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in &self.entries {
            if !seen.contains(&p.node.as_str()) {
                seen.push(p.node.as_str());
            }
        }
        seen
    }

    /// One leader per node, ascending (entries are rank-ordered, so the
    /// first appearance of each node is its lowest rank).
    pub fn leaders(&self) -> Vec<RankId> {
        let mut leaders = Vec::new();
        let mut seen: Vec<&str> = Vec::new();
        for (rank, p) in self.entries.iter().enumerate() {
            if !seen.contains(&p.node.as_str()) {
                seen.push(p.node.as_str());
                leaders.push(rank as RankId);
            }
        }
        leaders
    }
}

// ── Tests ────────────────────────────────────────────────────────────
