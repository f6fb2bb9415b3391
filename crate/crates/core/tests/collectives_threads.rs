//! Collective-operation integration tests: broadcast scheme
//! equivalence across cluster shapes, copy-count accounting on the
//! canonical four-node layout, link-to-copy fallback, and the
//! aggregation tree checked against a brute-force oracle.

use std::time::Duration;

use fcomm::collectives::{
    agg, bcast_central, bcast_node_aware, mcast_consume, mcast_publish, plan_node_aware,
    total_publishes, TAG_STRIDE,
};
use fcomm::sim::SimCluster;
use fcomm::transport::{Copier, TransportMode};
use fcomm::Error;

fn instant() -> Copier {
    Copier::Loopback {
        latency: Duration::ZERO,
        bandwidth_bytes_per_s: None,
    }
}

/// Deterministic test payload: size and content vary with `index`.
fn payload(index: u32) -> Vec<u8> {
    let sizes = [0usize, 1, 97, 4096];
    let size = sizes[index as usize % sizes.len()];
    (0..size).map(|i| (i as u32).wrapping_mul(31).wrapping_add(index) as u8).collect()
}

/// Node assignment for `np` ranks: contiguous blocks or round-robin.
fn assignment(np: u32, nodes: u32, round_robin: bool) -> Vec<u32> {
    (0..np)
        .map(|r| if round_robin { r % nodes } else { r * nodes / np })
        .collect()
}

#[test]
fn bcast_schemes_deliver_identical_bytes() {
    for np in [1u32, 2, 3, 5, 8] {
        for (nodes, round_robin) in [(1, false), (2, true), (4, false)] {
            let dir = tempfile::tempdir().unwrap();
            let sim = SimCluster::with_assignment(
                dir.path(),
                &assignment(np, nodes, round_robin),
                TransportMode::LocalFs,
                instant(),
            )
            .unwrap();

            let roots = [0, np - 1, np / 2];
            let results = sim
                .run(|ctx| {
                    let mut delivered = Vec::new();
                    let mut window = 0u32;
                    for (i, &root) in roots.iter().enumerate() {
                        let data = payload(i as u32);
                        let mine = (ctx.rank() == root).then_some(data.as_slice());
                        delivered.push(bcast_central(ctx, root, window * TAG_STRIDE, mine)?);
                        window += 1;
                        let mine = (ctx.rank() == root).then_some(data.as_slice());
                        delivered.push(bcast_node_aware(ctx, root, window * TAG_STRIDE, mine)?);
                        window += 1;
                    }
                    Ok(delivered)
                })
                .unwrap_or_else(|e| panic!("np={np} nodes={nodes} rr={round_robin}: {e}"));

            for per_rank in &results {
                for (i, _) in roots.iter().enumerate() {
                    let expected = payload(i as u32);
                    assert_eq!(per_rank[2 * i], expected, "central delivery differs");
                    assert_eq!(per_rank[2 * i + 1], expected, "node-aware delivery differs");
                }
            }
            assert!(
                sim.residual_files().unwrap().is_empty(),
                "np={np} nodes={nodes} rr={round_robin}: residual files"
            );
        }
    }
}

#[test]
fn node_aware_plan_and_copy_counts_on_four_by_two() {
    // Four nodes, two ranks each, root 0: the root multicasts to the
    // other nodes' leaders {2, 4, 6}, then each node distributes
    // internally {0→1, 2→3, 4→5, 6→7}. Exactly one buffer and one lock
    // cross to each of the three remote nodes: 6 = 2×(4−1) copies.
    let dir = tempfile::tempdir().unwrap();
    let sim = SimCluster::new(
        dir.path(),
        &[2, 2, 2, 2],
        TransportMode::LocalFs,
        instant(),
    )
    .unwrap();

    let plan = plan_node_aware(sim.map(), 0).unwrap();
    assert_eq!(plan.leader_targets, vec![2, 4, 6]);
    assert_eq!(
        plan.local_groups,
        vec![(0, vec![1]), (2, vec![3]), (4, vec![5]), (6, vec![7])]
    );

    let data = b"four nodes, two ranks each".to_vec();
    let stats = sim
        .run(|ctx| {
            let mine = (ctx.rank() == 0).then_some(data.as_slice());
            let got = bcast_node_aware(ctx, 0, 0, mine)?;
            assert_eq!(got, data);
            Ok(ctx.stats())
        })
        .unwrap();

    let remote: u64 = stats.iter().map(|s| s.remote_copies).sum();
    assert_eq!(remote, 6, "one buffer + one lock per remote node");
    // All crossings are the root's; the two intra-node levels are links.
    assert_eq!(stats[0].remote_copies, 6);
    assert!(sim.residual_files().unwrap().is_empty());
}

#[test]
fn non_leader_root_still_covers_every_rank() {
    // Root 1 is not its node's leader; it must nevertheless feed the
    // other nodes' leaders and its own node, and the remote-copy bill
    // stays 2 per remote node.
    let dir = tempfile::tempdir().unwrap();
    let sim = SimCluster::new(
        dir.path(),
        &[2, 2, 2, 2],
        TransportMode::LocalFs,
        instant(),
    )
    .unwrap();

    let plan = plan_node_aware(sim.map(), 1).unwrap();
    assert_eq!(plan.leader_targets, vec![2, 4, 6]);
    assert_eq!(
        plan.local_groups,
        vec![(1, vec![0]), (2, vec![3]), (4, vec![5]), (6, vec![7])]
    );

    let data = vec![0x42u8; 513];
    let stats = sim
        .run(|ctx| {
            let mine = (ctx.rank() == 1).then_some(data.as_slice());
            assert_eq!(bcast_node_aware(ctx, 1, 0, mine)?, data);
            Ok(ctx.stats())
        })
        .unwrap();
    assert_eq!(stats.iter().map(|s| s.remote_copies).sum::<u64>(), 6);
    assert!(sim.residual_files().unwrap().is_empty());
}

#[test]
fn copy_fallback_delivers_same_bytes_without_links() {
    let dir = tempfile::tempdir().unwrap();
    let sim = SimCluster::new(dir.path(), &[2, 2], TransportMode::LocalFs, instant())
        .unwrap()
        .with_copy_fallback(true);

    let data: Vec<u8> = (0..2048u32).map(|i| (i % 255) as u8).collect();
    let stats = sim
        .run(|ctx| {
            let mine = (ctx.rank() == 0).then_some(data.as_slice());
            assert_eq!(bcast_node_aware(ctx, 0, 0, mine)?, data);
            let mine = (ctx.rank() == 0).then_some(data.as_slice());
            assert_eq!(bcast_central(ctx, 0, TAG_STRIDE, mine)?, data);
            Ok(ctx.stats())
        })
        .unwrap();

    let fallbacks: u64 = stats.iter().map(|s| s.symlink_fallbacks).sum();
    assert!(fallbacks > 0, "forced fallback must route through copies");
    assert!(sim.residual_files().unwrap().is_empty());
}

#[test]
fn slow_copier_must_not_race_local_consumers() {
    // A multicast with both a local member and remote members: the
    // local member may consume (and reference-count the real pair to
    // zero) the instant its links appear, so the publisher must finish
    // every remote copy before attaching locals. The 20 ms copier turns
    // any ordering mistake into a reliable NotFound.
    let dir = tempfile::tempdir().unwrap();
    let sim = SimCluster::new(
        dir.path(),
        &[2, 2],
        TransportMode::LocalFs,
        Copier::Loopback {
            latency: Duration::from_millis(20),
            bandwidth_bytes_per_s: None,
        },
    )
    .unwrap();

    let data = vec![0x77u8; 256];
    for round in 0..5u32 {
        sim.run(|ctx| {
            let mine = (ctx.rank() == 0).then_some(data.as_slice());
            assert_eq!(bcast_central(ctx, 0, round * TAG_STRIDE, mine)?, data);
            Ok(())
        })
        .unwrap();
    }
    assert!(sim.residual_files().unwrap().is_empty());
}

#[test]
fn subset_multicast_reaches_only_members() {
    // Members {1, 3} of a four-rank job spanning two nodes; ranks 0
    // (the source) and 2 stand aside.
    let dir = tempfile::tempdir().unwrap();
    let sim = SimCluster::new(dir.path(), &[2, 2], TransportMode::LocalFs, instant()).unwrap();
    let members = [1u32, 3];
    let data = b"to some, not all".to_vec();

    let results = sim
        .run(|ctx| match ctx.rank() {
            0 => {
                mcast_publish(ctx, &members, 5, &data)?;
                Ok(Vec::new())
            }
            r if members.contains(&r) => mcast_consume(ctx, 0, &members, 5),
            _ => Ok(Vec::new()),
        })
        .unwrap();

    assert_eq!(results[1], data);
    assert_eq!(results[3], data);
    assert!(results[0].is_empty() && results[2].is_empty());
    assert!(
        sim.residual_files().unwrap().is_empty(),
        "reference counting must reclaim the real pair and all links"
    );
}

#[test]
fn agg_matches_concatenation_oracle() {
    // Element i of the global array is f(i); each rank holds its block
    // and the gathered result must be exactly [f(0), …, f(len-1)].
    let f = |i: usize| (i as f64) * 0.5 - 3.0;
    for np in [1u32, 2, 3, 4, 5, 8] {
        let dir = tempfile::tempdir().unwrap();
        let nodes = vec![1u32; np as usize]; // one rank per node: worst case
        let sim = SimCluster::new(dir.path(), &nodes, TransportMode::LocalFs, instant()).unwrap();

        for (w, total_len) in [0usize, 1, 7, 8, 40].into_iter().enumerate() {
            let outputs = sim
                .run(|ctx| {
                    let (start, end) =
                        fcomm::collectives::block_range(ctx.rank(), np, total_len);
                    let segment: Vec<f64> = (start..end).map(f).collect();
                    let out = agg(ctx, w as u32 * TAG_STRIDE, &segment, total_len)?;
                    Ok((out, ctx.stats()))
                })
                .unwrap_or_else(|e| panic!("np={np} len={total_len}: {e}"));

            let oracle: Vec<f64> = (0..total_len).map(f).collect();
            assert_eq!(outputs[0].0.as_deref(), Some(oracle.as_slice()));
            for (r, (out, _)) in outputs.iter().enumerate().skip(1) {
                assert!(out.is_none(), "rank {r} must not hold the result");
            }
            // Every run hands each rank a fresh transport, so the
            // counters cover exactly this gather.
            let stats: Vec<_> = outputs.iter().map(|(_, s)| *s).collect();
            assert_eq!(
                total_publishes(&stats),
                np as u64 - 1,
                "binomial gather sends exactly np−1 messages per run"
            );
        }
        assert!(sim.residual_files().unwrap().is_empty());
    }
}

#[test]
fn agg_rejects_wrong_segment_shape_before_sending() {
    let dir = tempfile::tempdir().unwrap();
    let sim = SimCluster::new(dir.path(), &[2], TransportMode::SharedFs, instant()).unwrap();
    let ctx = sim.context(1).unwrap();
    // Rank 1 of 2 owns 5 of 10 elements; offering 4 is a shape error.
    match agg(&ctx, 0, &[0.0; 4], 10) {
        Err(Error::ShapeMismatch { expected: 5, got: 4 }) => {}
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
    assert_eq!(ctx.stats().publishes, 0, "nothing may be sent on error");
    assert!(sim.residual_files().unwrap().is_empty());
}
