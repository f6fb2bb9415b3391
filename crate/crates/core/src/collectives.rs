//! Collective operations: multicast, broadcast, and aggregation.
//!
//! # Multicast: one buffer, many readers
//!
//! A naive N-way send writes (and for remote destinations, copies) the
//! payload once per destination. Multicast instead writes **one real
//! buffer/lock pair** and attaches each destination to it with symlinks
//! named exactly like that destination's point-to-point files. Remote
//! nodes receive one copy of the real pair each; the lowest-ranked group
//! member on the node (its *distributor*) then fans out symlinks
//! locally. Consumption is reference-counted: each member deletes its
//! own links, and whoever deletes the last link removes the real pair.
//!
//! On file systems without symlinks the attachment degrades to a full
//! copy (counted in [`TransportStats::symlink_fallbacks`]); the cleanup
//! protocol is unchanged because it scans by file name, not link-ness.
//!
//! # Broadcast
//!
//! * [`bcast_central`] — single-level multicast from branch root to all other
//!   ranks. On a shared file system this costs one buffer write total.
//! * [`bcast_node_aware`] — two levels of multicast: the root first
//!   multicasts to the leader of every *other* node, then each node
//!   runs an intra-node multicast (the root distributes on its own
//!   node, whether or not it is that node's leader). Cross-node traffic
//!   is exactly one pair per other node — `2(M-1)` copier calls for
//!   `M` nodes — independent of how many ranks share each node.
//!
//! # Aggregation
//!
//! [`agg`] gathers a block-distributed `f64` array to rank 0 along a
//! binomial tree: in round `k`, every rank whose low bits equal `2^k`
//! sends its accumulated contiguous segment to the rank `2^k` below it.
//! `np - 1` messages and `ceil(log2 np)` rounds in total, and every
//! hop transfers a contiguous block, so no re-ordering is ever needed.
//!
//! # Tags
//!
//! A collective call owns the tag window `[tag, tag + TAG_STRIDE)`:
//! implementations may use small offsets within it (broadcast uses
//! `tag` and `tag + 1`). Concurrent collectives must be spaced at
//! least [`TAG_STRIDE`] apart.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::msgcore::{self, Envelope, RankId, Tag};
use crate::p2p::{wait_for, CommContext};
use crate::topology::HostRankMap;
use crate::transport::TransportStats;
use crate::Result;

/// Tag spacing reserved for one collective operation.
pub const TAG_STRIDE: Tag = 1024;

// ── Block distribution ───────────────────────────────────────────────

/// Element range `[start, end)` of `rank`'s block when `total_len`
/// elements are distributed over `np` ranks: blocks are balanced, with
/// the lower ranks taking one extra element when the division is uneven.
pub fn block_range(rank: RankId, np: u32, total_len: usize) -> (usize, usize) {
    assert!(rank < np, "rank {rank} out of range for np {np}");
    let np = np as usize;
    let rank = rank as usize;
    let base = total_len / np;
    let rem = total_len % np;
    let start = rank * base + rank.min(rem);
    let len = base + usize::from(rank < rem);
    (start, start + len)
}

// ── Broadcast planning ───────────────────────────────────────────────

/// Static data-movement plan for a node-aware broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BcastPlan {
    pub root: RankId,
    /// Level 1: the root multicasts to these ranks — the leader of
    /// every node other than the root's. Empty on a one-node job.
    pub leader_targets: Vec<RankId>,
    /// Level 2: per-node multicast as (source, members). The source is
    /// the node's level-1 receiver, except on the root's own node where
    /// the root distributes directly. Nodes with nothing to distribute
    /// locally are omitted.
    pub local_groups: Vec<(RankId, Vec<RankId>)>,
}

/// Plan a node-aware broadcast over `map` from `root`.
pub fn plan_node_aware(map: &HostRankMap, root: RankId) -> Result<BcastPlan> {
    let root_node = map.node_of(root)?.to_string();

    let mut leader_targets = Vec::new();
    let mut local_groups = Vec::new();
    for node in map.nodes() {
        // The level-2 source on each node: the root itself at home,
        // the node's leader everywhere else.
        let source = if node == root_node {
            root
        } else {
            let leader = map.leader_of_node(node)?;
            leader_targets.push(leader);
            leader
        };
        let members: Vec<RankId> = map
            .node_peers(source)?
            .into_iter()
            .filter(|&r| r != source)
            .collect();
        if !members.is_empty() {
            local_groups.push((source, members));
        }
    }
    Ok(BcastPlan { root, leader_targets, local_groups })
}

// ── Aggregation planning ─────────────────────────────────────────────

/// One hop of the aggregation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggTransfer {
    pub from: RankId,
    pub to: RankId,
}

/// Static transfer schedule for a binomial-tree aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggPlan {
    pub np: u32,
    /// Rounds in execution order; transfers within a round are
    /// independent and may run concurrently.
    pub rounds: Vec<Vec<AggTransfer>>,
}

impl AggPlan {
    /// Total number of messages across all rounds (always `np - 1`).
    pub fn total_transfers(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }
}

/// Plan a binomial-tree aggregation to rank 0 over `np` ranks.
///
/// In round `k`, rank `r` sends to `r - 2^k` exactly when
/// `r mod 2^(k+1) == 2^k`; a rank goes quiet after sending. Every rank
/// except 0 sends exactly once, so `np` ranks finish in `np - 1`
/// messages over at most `ceil(log2 np)` rounds.
pub fn plan_agg(np: u32) -> AggPlan {
    assert!(np > 0, "np must be positive");
    let mut rounds = Vec::new();
    let mut step: u64 = 1; // 2^k
    while step < np as u64 {
        let pair = step * 2; // 2^(k+1)
        let round: Vec<AggTransfer> = (0..np as u64)
            .filter(|r| r % pair == step)
            .map(|r| AggTransfer {
                from: r as RankId,
                to: (r - step) as RankId,
            })
            .collect();
        rounds.push(round);
        step = pair;
    }
    AggPlan { np, rounds }
}

// ── Multicast ────────────────────────────────────────────────────────

/// Member-facing file names: identical to the point-to-point names so
/// a member's inbox looks the same no matter how the message traveled.
fn member_names(member: RankId, source: RankId, tag: Tag) -> (String, String) {
    let env = Envelope::new(source, member, tag);
    (msgcore::buffer_name(&env), msgcore::lock_name(&env))
}

/// Multicast `payload` from this rank to `members`.
///
/// Writes one real pair in the caller's inbox, sends one copy of the
/// pair to each node that hosts remote members, and only then attaches
/// local members by symlink (buffers first, then locks) — an attached
/// member may consume and reference-count the real pair away at any
/// moment, so all copies out of it must already be done. The caller
/// must not appear in `members`; every member must eventually call
/// [`mcast_consume`] with the same member list.
pub fn mcast_publish(
    ctx: &CommContext,
    members: &[RankId],
    tag: Tag,
    payload: &[u8],
) -> Result<()> {
    let members: Vec<RankId> = members.iter().copied().filter(|&m| m != ctx.rank()).collect();
    if members.is_empty() {
        return Ok(());
    }
    let source = ctx.rank();
    let map = ctx.transport().map().clone();
    let real_dir = map.msg_dir(source)?.to_path_buf();
    fs::create_dir_all(&real_dir)?;

    let buf_name = msgcore::mcast_buffer_name(source, tag);
    let lock_name = msgcore::mcast_lock_name(source, tag);
    // The shared header carries dest = source; members match on source
    // and tag only, since one header cannot name every destination.
    let env = Envelope::new(source, source, tag);
    let real_buf = msgcore::write_atomic(&real_dir, &buf_name, &msgcore::encode(&env, payload))?;
    let real_lock = real_dir.join(&lock_name);
    ctx.transport().note_publish();

    let mut locals = Vec::new();
    let mut remote_nodes: BTreeMap<String, Vec<RankId>> = BTreeMap::new();
    for &m in &members {
        if ctx.transport().is_local(source, m)? {
            locals.push(m);
        } else {
            remote_nodes
                .entry(map.node_of(m)?.to_string())
                .or_default()
                .push(m);
        }
    }

    msgcore::create_lock(&real_lock, &env)?;

    // Remote fan-out first: one pair per member node, delivered into
    // the node's distributor inbox (lowest member rank on that node).
    // Local members are armed only afterwards — once a local member can
    // see its lock link it may consume and reference-count the real
    // pair away, which must not happen while a copier still reads it.
    for (node, node_members) in &remote_nodes {
        let distributor = *node_members.iter().min().unwrap();
        let dest_dir = map.msg_dir(distributor)?.to_path_buf();
        ctx.transport().transfer_pair(&real_buf, &real_lock, node, &dest_dir)?;
    }

    // Local attachment: every buffer link strictly before any lock
    // link, so no member's lock can appear before its buffer.
    for &m in &locals {
        let (m_buf, _) = member_names(m, source, tag);
        ctx.transport().link_or_copy(&real_buf, &map.msg_dir(m)?.join(m_buf))?;
    }
    for &m in &locals {
        let (_, m_lock) = member_names(m, source, tag);
        ctx.transport().link_or_copy(&real_lock, &map.msg_dir(m)?.join(m_lock))?;
    }

    // With no local members the real pair has no reader left to
    // reference-count it; it has served its purpose once copied out.
    if locals.is_empty() {
        fs::remove_file(&real_lock)?;
        fs::remove_file(&real_buf)?;
    }
    Ok(())
}

/// Receive this rank's copy of a multicast from `source`.
///
/// `members` must be the same list the publisher used (it defines the
/// local reference-count set). Blocks until the message is available,
/// verifies source/tag and payload checksum, consumes this member's
/// attachment, and removes the real pair after the last local member.
pub fn mcast_consume(
    ctx: &CommContext,
    source: RankId,
    members: &[RankId],
    tag: Tag,
) -> Result<Vec<u8>> {
    let me = ctx.rank();
    debug_assert!(members.contains(&me), "consumer must be in the member list");
    let map = ctx.transport().map().clone();

    // Members sharing my file system view, myself included.
    let mut locals = Vec::new();
    for &m in members {
        if m != source && ctx.transport().is_local(me, m)? {
            locals.push(m);
        }
    }
    let distributor = *locals.iter().min().unwrap();

    let buf_name = msgcore::mcast_buffer_name(source, tag);
    let lock_name = msgcore::mcast_lock_name(source, tag);
    // Where the real pair lives: the source's inbox when we share its
    // file system, otherwise the distributor inbox it was copied into.
    let crossed_from_source = !ctx.transport().is_local(me, source)?;
    let real_dir: PathBuf = if crossed_from_source {
        map.msg_dir(distributor)?.to_path_buf()
    } else {
        map.msg_dir(source)?.to_path_buf()
    };
    let real_buf = real_dir.join(&buf_name);
    let real_lock = real_dir.join(&lock_name);

    if crossed_from_source && me == distributor {
        // The copied pair lands in my inbox; fan out to my node's
        // members (myself included), buffers before locks.
        wait_for(&real_lock, ctx.poll())?;
        for &m in &locals {
            let (m_buf, _) = member_names(m, source, tag);
            ctx.transport().link_or_copy(&real_buf, &map.msg_dir(m)?.join(m_buf))?;
        }
        for &m in &locals {
            let (_, m_lock) = member_names(m, source, tag);
            ctx.transport().link_or_copy(&real_lock, &map.msg_dir(m)?.join(m_lock))?;
        }
    }

    // From here on, an ordinary lock wait on my own attachment.
    let (my_buf_name, my_lock_name) = member_names(me, source, tag);
    let my_dir = map.msg_dir(me)?;
    let my_lock = my_dir.join(&my_lock_name);
    let my_buf = my_dir.join(&my_buf_name);
    wait_for(&my_lock, ctx.poll())?;

    let bytes = fs::read(&my_buf)?;
    let (got, payload) = msgcore::decode(&bytes)?;
    if got.source != source || got.tag != tag {
        return Err(Error::HeaderMismatch {
            want_source: source,
            want_dest: me,
            want_tag: tag,
            got_source: got.source,
            got_dest: got.dest,
            got_tag: got.tag,
        });
    }
    let payload = payload.to_vec();

    // Drop my attachment, then reference-count the survivors: when no
    // member buffer remains on this file system, the real pair goes
    // too. Concurrent consumers may race to this delete; losing the
    // race (NotFound) is benign.
    fs::remove_file(&my_lock)?;
    fs::remove_file(&my_buf)?;
    let any_left = locals.iter().any(|&m| {
        let (m_buf, _) = member_names(m, source, tag);
        map.msg_dir(m).map(|d| d.join(m_buf).exists()).unwrap_or(false)
    });
    if !any_left {
        remove_if_present(&real_lock)?;
        remove_if_present(&real_buf)?;
    }
    Ok(payload)
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}

// ── Broadcast execution ──────────────────────────────────────────────

/// Single-level broadcast: the root multicasts to every other rank.
///
/// On a shared file system this writes the payload once, total. With
/// node-private inboxes it still copies only once per remote *node*
/// (the multicast fan-out), but all distribution work falls on the
/// root's node — see [`bcast_node_aware`] for the two-level version.
///
/// The root passes `Some(payload)`, everyone else `None`; all ranks
/// return the payload.
pub fn bcast_central(
    ctx: &CommContext,
    root: RankId,
    tag: Tag,
    payload: Option<&[u8]>,
) -> Result<Vec<u8>> {
    let members: Vec<RankId> = (0..ctx.np()).filter(|&r| r != root).collect();
    if ctx.rank() == root {
        let payload = payload.expect("broadcast root must supply the payload");
        if !members.is_empty() {
            mcast_publish(ctx, &members, tag, payload)?;
        }
        Ok(payload.to_vec())
    } else {
        mcast_consume(ctx, root, &members, tag)
    }
}

/// Two-level node-aware broadcast (see module docs).
///
/// The root passes `Some(payload)`, everyone else `None`; all ranks
/// return the payload. Uses tags `tag` (leader level) and `tag + 1`
/// (intra-node level) from the call's tag window.
pub fn bcast_node_aware(
    ctx: &CommContext,
    root: RankId,
    tag: Tag,
    payload: Option<&[u8]>,
) -> Result<Vec<u8>> {
    let plan = plan_node_aware(ctx.transport().map(), root)?;
    let me = ctx.rank();

    if me == root {
        let payload = payload.expect("broadcast root must supply the payload");
        if !plan.leader_targets.is_empty() {
            mcast_publish(ctx, &plan.leader_targets, tag, payload)?;
        }
        if let Some((_, members)) = plan.local_groups.iter().find(|(s, _)| *s == root) {
            mcast_publish(ctx, members, tag + 1, payload)?;
        }
        return Ok(payload.to_vec());
    }

    if plan.leader_targets.contains(&me) {
        let data = mcast_consume(ctx, root, &plan.leader_targets, tag)?;
        if let Some((_, members)) = plan.local_groups.iter().find(|(s, _)| *s == me) {
            mcast_publish(ctx, members, tag + 1, &data)?;
        }
        return Ok(data);
    }

    let (source, members) = plan
        .local_groups
        .iter()
        .find(|(_, ms)| ms.contains(&me))
        .expect("every non-root rank is a leader target or a local member");
    mcast_consume(ctx, *source, members, tag + 1)
}

// ── Aggregation execution ────────────────────────────────────────────

fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Start of `rank`'s block, extended so that `block_start(np) == total`.
fn block_start(rank: u64, np: u32, total_len: usize) -> usize {
    if rank >= np as u64 {
        total_len
    } else {
        block_range(rank as RankId, np, total_len).0
    }
}

/// Gather a block-distributed `f64` array to rank 0.
///
/// Each rank contributes the segment that [`block_range`] assigns it
/// for `(rank, np, total_len)`; a wrong-sized segment fails with
/// [`Error::ShapeMismatch`] before anything is sent. Rank 0 returns
/// `Some(full_array)`, every other rank `None`. Uses a single tag from
/// the call's tag window (each rank sends at most once, to a distinct
/// destination).
pub fn agg(
    ctx: &CommContext,
    tag: Tag,
    segment: &[f64],
    total_len: usize,
) -> Result<Option<Vec<f64>>> {
    let me = ctx.rank();
    let np = ctx.np();
    let (start, end) = block_range(me, np, total_len);
    if segment.len() != end - start {
        return Err(Error::ShapeMismatch {
            expected: end - start,
            got: segment.len(),
        });
    }

    let mut acc = segment.to_vec();
    let mut step: u64 = 1; // 2^k
    while step < np as u64 {
        let pair = step * 2;
        let r = me as u64;
        if r % pair == step {
            // My turn to send everything I hold to the rank below, then
            // go quiet for the remaining rounds.
            ctx.send((r - step) as RankId, tag, &f64s_to_bytes(&acc))?;
            return Ok(None);
        }
        if r.is_multiple_of(pair) && r + step < np as u64 {
            // Receive my partner's accumulated block; it extends my
            // contiguous range exactly to the next boundary.
            let sender = (r + step) as RankId;
            let expected = block_start(r + pair, np, total_len) - block_start(r + step, np, total_len);
            let bytes = ctx.recv(sender, tag)?;
            if bytes.len() != expected * 8 {
                return Err(Error::ShapeMismatch {
                    expected,
                    got: bytes.len() / 8,
                });
            }
            acc.extend_from_slice(&bytes_to_f64s(&bytes));
        }
        step = pair;
    }
    if me == 0 {
        Ok(Some(acc))
    } else {
        // Unreachable for valid plans: every nonzero rank sends once.
        Ok(None)
    }
}

/// Sum of the publish counters a set of per-rank stats snapshots — the
/// number of real buffers a collective wrote across the job.
pub fn total_publishes(stats: &[TransportStats]) -> u64 {
    stats.iter().map(|s| s.publishes).sum()
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Placement;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn block_map(nodes: usize, per_node: usize) -> HostRankMap {
        let mut entries = Vec::new();
        for n in 0..nodes {
            for _ in 0..per_node {
                entries.push(Placement {
                    node: format!("n{n}"),
                    msg_dir: PathBuf::from(format!("/inbox/n{n}")),
                });
            }
        }
        HostRankMap::new(entries).unwrap()
    }

    // ── block_range ──────────────────────────────────────────────────

    #[test]
    fn block_range_balances_with_remainder_low() {
        // 10 elements over 3 ranks: 4, 3, 3.
        assert_eq!(block_range(0, 3, 10), (0, 4));
        assert_eq!(block_range(1, 3, 10), (4, 7));
        assert_eq!(block_range(2, 3, 10), (7, 10));
        // Fewer elements than ranks: trailing ranks hold nothing.
        assert_eq!(block_range(0, 4, 2), (0, 1));
        assert_eq!(block_range(1, 4, 2), (1, 2));
        assert_eq!(block_range(2, 4, 2), (2, 2));
        assert_eq!(block_range(3, 4, 2), (2, 2));
    }

    proptest! {
        /// Blocks tile [0, total): contiguous, ordered, sizes within
        /// one element of each other, lower ranks never smaller.
        #[test]
        fn block_ranges_tile_the_array(np in 1u32..40, total in 0usize..500) {
            let mut cursor = 0;
            let mut sizes = Vec::new();
            for r in 0..np {
                let (s, e) = block_range(r, np, total);
                prop_assert_eq!(s, cursor);
                prop_assert!(e >= s);
                sizes.push(e - s);
                cursor = e;
            }
            prop_assert_eq!(cursor, total);
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    // ── plan_node_aware ──────────────────────────────────────────────

    /// Four nodes, two ranks each, root 0: the root reaches leaders
    /// 2, 4, 6, then each even rank hands to its odd neighbor.
    #[test]
    fn plan_four_nodes_two_ranks_root_leader() {
        let map = block_map(4, 2);
        let plan = plan_node_aware(&map, 0).unwrap();
        assert_eq!(plan.leader_targets, vec![2, 4, 6]);
        assert_eq!(
            plan.local_groups,
            vec![(0, vec![1]), (2, vec![3]), (4, vec![5]), (6, vec![7])]
        );
    }

    /// A non-leader root distributes on its own node itself; its node's
    /// leader becomes an ordinary local member.
    #[test]
    fn plan_handles_non_leader_root() {
        let map = block_map(4, 2);
        let plan = plan_node_aware(&map, 3).unwrap();
        assert_eq!(plan.leader_targets, vec![0, 4, 6]);
        assert_eq!(
            plan.local_groups,
            vec![(0, vec![1]), (3, vec![2]), (4, vec![5]), (6, vec![7])]
        );
    }

    #[test]
    fn plan_single_node_has_no_leader_level() {
        let map = block_map(1, 5);
        let plan = plan_node_aware(&map, 2).unwrap();
        assert!(plan.leader_targets.is_empty());
        assert_eq!(plan.local_groups, vec![(2, vec![0, 1, 3, 4])]);
    }

    #[test]
    fn plan_one_rank_per_node_has_no_local_level() {
        let map = block_map(4, 1);
        let plan = plan_node_aware(&map, 0).unwrap();
        assert_eq!(plan.leader_targets, vec![1, 2, 3]);
        assert!(plan.local_groups.is_empty());
    }

    proptest! {
        /// Every rank is reached exactly once: the root, the leader
        /// targets, and the local-group members partition 0..np; each
        /// local source is the root or a leader target on its own node.
        #[test]
        fn plan_reaches_every_rank_once(
            assignment in proptest::collection::vec(0usize..5, 1..32),
            root_pick in any::<prop::sample::Index>(),
        ) {
            let entries: Vec<Placement> = assignment
                .iter()
                .map(|n| Placement {
                    node: format!("n{n}"),
                    msg_dir: PathBuf::from(format!("/inbox/n{n}")),
                })
                .collect();
            let map = HostRankMap::new(entries).unwrap();
            let root = root_pick.index(map.np() as usize) as RankId;
            let plan = plan_node_aware(&map, root).unwrap();

            let mut reached = vec![0u32; map.np() as usize];
            reached[root as usize] += 1;
            for &l in &plan.leader_targets {
                reached[l as usize] += 1;
                prop_assert!(map.is_leader(l).unwrap());
                prop_assert!(!map.colocated(l, root).unwrap());
            }
            for (source, members) in &plan.local_groups {
                prop_assert!(*source == root || plan.leader_targets.contains(source));
                prop_assert!(!members.is_empty());
                for &m in members {
                    reached[m as usize] += 1;
                    prop_assert!(map.colocated(*source, m).unwrap());
                    prop_assert_ne!(m, *source);
                }
            }
            prop_assert!(reached.iter().all(|&c| c == 1));
            // One leader target per non-root node.
            let other_nodes: HashSet<&str> = (0..map.np())
                .map(|r| map.node_of(r).unwrap())
                .filter(|n| *n != map.node_of(root).unwrap())
                .collect();
            prop_assert_eq!(plan.leader_targets.len(), other_nodes.len());
        }
    }

    // ── plan_agg ─────────────────────────────────────────────────────

    #[test]
    fn agg_plan_eight_ranks() {
        let plan = plan_agg(8);
        let t = |from, to| AggTransfer { from, to };
        assert_eq!(
            plan.rounds,
            vec![
                vec![t(1, 0), t(3, 2), t(5, 4), t(7, 6)],
                vec![t(2, 0), t(6, 4)],
                vec![t(4, 0)],
            ]
        );
    }

    #[test]
    fn agg_plan_trivial_sizes() {
        assert!(plan_agg(1).rounds.is_empty());
        assert_eq!(plan_agg(2).rounds, vec![vec![AggTransfer { from: 1, to: 0 }]]);
    }

    proptest! {
        /// np-1 messages, log-bounded rounds, every nonzero rank sends
        /// exactly once, and replaying the plan funnels every rank's
        /// block to rank 0 in order.
        #[test]
        fn agg_plan_matches_reference_model(np in 1u32..70) {
            let plan = plan_agg(np);
            prop_assert_eq!(plan.np, np);
            prop_assert_eq!(plan.total_transfers() as u32, np - 1);
            let bound = (np as f64).log2().ceil() as usize;
            prop_assert_eq!(plan.rounds.len(), bound);

            let mut sent = vec![false; np as usize];
            // Model: each rank holds an ordered list of block owners.
            let mut holding: Vec<Vec<RankId>> =
                (0..np).map(|r| vec![r]).collect();
            for round in &plan.rounds {
                // Transfers within a round touch disjoint ranks.
                let mut touched = HashSet::new();
                for t in round {
                    prop_assert!(touched.insert(t.from));
                    prop_assert!(touched.insert(t.to));
                    prop_assert!(t.to < t.from);
                    prop_assert!(!sent[t.from as usize], "rank sent twice");
                    sent[t.from as usize] = true;
                    let moved = std::mem::take(&mut holding[t.from as usize]);
                    holding[t.to as usize].extend(moved);
                }
            }
            for r in 1..np {
                prop_assert!(sent[r as usize], "rank {} never sent", r);
            }
            let expect: Vec<RankId> = (0..np).collect();
            prop_assert_eq!(&holding[0], &expect);
        }
    }

    // ── f64 payload helpers ──────────────────────────────────────────

    #[test]
    fn f64_bytes_round_trip() {
        let vals = [0.0, -1.5, f64::MAX, f64::MIN_POSITIVE, 1e-300];
        assert_eq!(bytes_to_f64s(&f64s_to_bytes(&vals)), vals);
    }
}
