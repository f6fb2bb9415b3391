//! Per-rank benchmark worker programs.
//!
//! The `bench` driver launches `fcomm worker <kind> ...` once per rank;
//! the worker discovers its identity from the launcher's environment
//! contract, runs the measurement protocol for its role, and writes a
//! per-rank result file (`rank<r>.txt`, one `key=value ...` line per
//! measured repetition) into the shared `--result-dir`.
//!
//! Measurement protocols:
//!
//! * **p2p** — rank 0 and rank 1 ping-pong each payload size; one-way
//!   time is half the round trip. Other ranks idle.
//! * **bcast** — rank 0 broadcasts, every member verifies the payload
//!   against its independently regenerated copy and sends a one-byte
//!   ack; rank 0's raw time spans broadcast plus ack gather. A 1-byte
//!   ping-pong calibration with the highest rank estimates the ack
//!   cost, and the corrected time subtracts it. Copy counters are
//!   snapshotted around the broadcast only, never the acks.
//! * **agg** — a block-distributed `f64` array is gathered to rank 0,
//!   with a tiny broadcast as a starting gun so repetitions do not
//!   overlap. Rank 0 verifies every gathered element.
//!
//! Every repetition (including one unmeasured warmup per size) owns a
//! fresh collective tag window, so no two operations ever share file
//! names. Payloads are regenerated from the seed on both sides: a
//! benchmark that would report a time for wrong data exits nonzero
//! instead.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fcomm::collectives::{self, TAG_STRIDE};
use fcomm::launcher::{CopierKind, CopierSpec, ENV_MAP_FILE, ENV_MSG_DIR, ENV_NP, ENV_RANK};
use fcomm::msgcore::{RankId, Tag};
use fcomm::p2p::{CommContext, PollPolicy};
use fcomm::topology::HostRankMap;
use fcomm::transport::{Transport, TransportMode};
use fcomm::{Error, Result};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::record::median;

/// Tag offset (within an operation's window) used by broadcast acks.
const ACK_OFFSET: Tag = 900;
/// Tag offset used by the aggregation starting-gun broadcast.
const GO_OFFSET: Tag = 500;
// Both offsets must stay inside one tag window.
const _: () = assert!(ACK_OFFSET < collectives::TAG_STRIDE && GO_OFFSET < collectives::TAG_STRIDE);
/// Ping-pong rounds used to estimate the ack cost.
const CALIBRATION_ROUNDS: usize = 5;

/// Which benchmark a worker (or driver) runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    P2p,
    Bcast,
    Agg,
}

impl BenchKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchKind::P2p => "p2p",
            BenchKind::Bcast => "bcast",
            BenchKind::Agg => "agg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p2p" => Ok(BenchKind::P2p),
            "bcast" => Ok(BenchKind::Bcast),
            "agg" => Ok(BenchKind::Agg),
            other => Err(Error::InvalidJobSpec(format!("unknown benchmark {other:?}"))),
        }
    }
}

/// Broadcast data-movement scheme under measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcastScheme {
    /// Single-level multicast from the root.
    Central,
    /// Two-level leader broadcast.
    NodeAware,
    /// Reference scheme: one point-to-point send per member.
    NaiveP2p,
}

impl BcastScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            BcastScheme::Central => "central",
            BcastScheme::NodeAware => "node_aware",
            BcastScheme::NaiveP2p => "naive_p2p",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "central" => Ok(BcastScheme::Central),
            "node_aware" => Ok(BcastScheme::NodeAware),
            "naive_p2p" => Ok(BcastScheme::NaiveP2p),
            other => Err(Error::InvalidJobSpec(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Parse a transport name from the command line.
pub fn parse_transport(s: &str) -> Result<TransportMode> {
    match s {
        "shared" => Ok(TransportMode::SharedFs),
        "local" => Ok(TransportMode::LocalFs),
        other => Err(Error::InvalidJobSpec(format!("unknown transport {other:?}"))),
    }
}

/// Transport name as it appears in results.
pub fn transport_name(mode: TransportMode) -> &'static str {
    match mode {
        TransportMode::SharedFs => "shared",
        TransportMode::LocalFs => "local",
    }
}

/// Everything a worker needs beyond the launcher environment.
#[derive(Debug, Clone)]
pub struct WorkerArgs {
    pub kind: BenchKind,
    pub scheme: BcastScheme,
    pub sizes: Vec<u64>,
    /// Measured repetitions per size (one extra warmup runs first).
    pub reps: u32,
    pub seed: u64,
    pub transport: TransportMode,
    pub copier_latency_ms: u64,
    pub copier_bandwidth: u64,
    pub result_dir: PathBuf,
}

// ── Deterministic test data ──────────────────────────────────────────

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix3(a: u64, b: u64, c: u64) -> u64 {
    splitmix64(a ^ splitmix64(b ^ splitmix64(c)))
}

/// Deterministic payload for (seed, size, rep). Sender and receivers
/// regenerate it independently, so byte equality is an end-to-end check
/// that needs no second channel.
pub fn bench_payload(seed: u64, size: u64, rep: u32) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix3(seed, size, rep as u64));
    let mut buf = vec![0u8; size as usize];
    rng.fill_bytes(&mut buf);
    buf
}

/// Random-access element of the aggregation input array: any rank can
/// produce the value for any global index without materializing the
/// whole array.
pub fn agg_element(seed: u64, size: u64, rep: u32, index: usize) -> f64 {
    let x = mix3(mix3(seed, size, rep as u64), index as u64, 0x5851_F42D_4C95_7F2D);
    (x >> 11) as f64 / (1u64 << 53) as f64
}

// ── Environment ──────────────────────────────────────────────────────

/// Identity handed to a rank process by the launcher.
#[derive(Debug, Clone)]
pub struct RankEnv {
    pub rank: RankId,
    pub np: u32,
    pub map_file: PathBuf,
    pub msg_dir: PathBuf,
}

impl RankEnv {
    pub fn from_env() -> Result<Self> {
        let get = |key: &str| {
            std::env::var(key)
                .map_err(|_| Error::InvalidJobSpec(format!("missing {key} in environment")))
        };
        let parse_u32 = |key: &str, value: String| {
            value
                .parse::<u32>()
                .map_err(|e| Error::InvalidJobSpec(format!("bad {key}: {e}")))
        };
        Ok(RankEnv {
            rank: parse_u32(ENV_RANK, get(ENV_RANK)?)?,
            np: parse_u32(ENV_NP, get(ENV_NP)?)?,
            map_file: PathBuf::from(get(ENV_MAP_FILE)?),
            msg_dir: PathBuf::from(get(ENV_MSG_DIR)?),
        })
    }
}

/// Build this rank's endpoint from the environment contract plus the
/// worker's transport arguments, cross-checking both views of the map.
pub fn context_from_env(args: &WorkerArgs) -> Result<(RankEnv, CommContext)> {
    let env = RankEnv::from_env()?;
    let map = Arc::new(HostRankMap::read_file(&env.map_file)?);
    if map.np() != env.np {
        return Err(Error::InvalidJobSpec(format!(
            "map file says np {}, environment says {}",
            map.np(),
            env.np
        )));
    }
    if map.msg_dir(env.rank)? != env.msg_dir {
        return Err(Error::InvalidJobSpec(format!(
            "map file and environment disagree on rank {}'s inbox",
            env.rank
        )));
    }
    let copier = CopierSpec {
        kind: CopierKind::Loopback,
        latency_ms: args.copier_latency_ms,
        bandwidth_bytes_per_s: args.copier_bandwidth,
        connect_timeout_s: 10,
    }
    .build();
    let transport = Transport::new(args.transport, map, copier);
    // Flat 1 ms polling, not the default backoff: benchmark waits are
    // short and frequent, and a grown interval would quantize every
    // timing to the backoff ceiling instead of the transport's latency.
    let poll = PollPolicy {
        initial: Duration::from_millis(1),
        backoff: 1.0,
        max_interval: Duration::from_millis(1),
        timeout: Some(Duration::from_secs(120)),
    };
    let ctx = CommContext::new(env.rank, transport)?.with_poll(poll)?;
    Ok((env, ctx))
}

// ── Entry point ──────────────────────────────────────────────────────

/// Run this rank's part of the benchmark and write its result file.
pub fn run_worker(args: &WorkerArgs) -> Result<()> {
    let (env, ctx) = context_from_env(args)?;
    let lines = match args.kind {
        BenchKind::P2p => p2p_worker(&ctx, args)?,
        BenchKind::Bcast => bcast_worker(&ctx, args)?,
        BenchKind::Agg => agg_worker(&ctx, args)?,
    };
    fs::create_dir_all(&args.result_dir)?;
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(args.result_dir.join(format!("rank{}.txt", env.rank)), text)?;
    Ok(())
}

/// Allocates consecutive collective tag windows.
struct TagWindows(Tag);

impl TagWindows {
    fn next(&mut self) -> Tag {
        let base = self.0 * TAG_STRIDE;
        self.0 += 1;
        base
    }
}

// ── p2p ──────────────────────────────────────────────────────────────

fn p2p_worker(ctx: &CommContext, args: &WorkerArgs) -> Result<Vec<String>> {
    if ctx.np() < 2 {
        return Err(Error::InvalidJobSpec("p2p benchmark needs np >= 2".into()));
    }
    let me = ctx.rank();
    if me > 1 {
        return Ok(Vec::new()); // only ranks 0 and 1 participate
    }

    let mut windows = TagWindows(0);
    let mut lines = Vec::new();
    for &size in &args.sizes {
        for rep in 0..=args.reps {
            let base = windows.next();
            if me == 0 {
                let payload = bench_payload(args.seed, size, rep);
                let before = ctx.stats();
                let t0 = Instant::now();
                ctx.send(1, base, &payload)?;
                let echo = ctx.recv(1, base + 1)?;
                let rtt = t0.elapsed();
                let after = ctx.stats();
                if echo != payload {
                    return Err(Error::PayloadVerification(format!(
                        "p2p echo differs for size {size} rep {rep}"
                    )));
                }
                if rep > 0 {
                    // This rank's counter delta covers its own send
                    // only — exactly the one-way copy cost.
                    let copies = after.remote_copies - before.remote_copies;
                    let oneway = rtt.as_secs_f64() / 2.0;
                    lines.push(format!(
                        "size={size} rep={rep} oneway_s={oneway:.9} copies={copies}"
                    ));
                }
            } else {
                let data = ctx.recv(0, base)?;
                ctx.send(0, base + 1, &data)?;
            }
        }
    }
    Ok(lines)
}

// ── bcast ────────────────────────────────────────────────────────────

fn bcast_worker(ctx: &CommContext, args: &WorkerArgs) -> Result<Vec<String>> {
    let np = ctx.np();
    if np < 2 {
        return Err(Error::InvalidJobSpec("bcast benchmark needs np >= 2".into()));
    }
    let me = ctx.rank();
    let root: RankId = 0;
    let last = np - 1;
    let mut windows = TagWindows(0);

    // Calibration: 1-byte ping-pong with the highest rank (under block
    // placement, the farthest member) estimates what one ack costs.
    // Round 0 is warmup; the median of the rest shrugs off stragglers.
    let mut rtts = Vec::new();
    for round in 0..=CALIBRATION_ROUNDS {
        let base = windows.next(); // advanced by every rank, in lockstep
        if me == root {
            let t0 = Instant::now();
            ctx.send(last, base, &[0u8])?;
            ctx.recv(last, base + 1)?;
            if round > 0 {
                rtts.push(t0.elapsed().as_secs_f64());
            }
        } else if me == last {
            let ping = ctx.recv(root, base)?;
            ctx.send(root, base + 1, &ping)?;
        }
    }
    let ack_est = if me == root { median(&rtts) / 2.0 } else { 0.0 };

    let mut lines = Vec::new();
    for &size in &args.sizes {
        for rep in 0..=args.reps {
            let base = windows.next();
            if me == root {
                let payload = bench_payload(args.seed, size, rep);
                let before = ctx.stats();
                let t0 = Instant::now();
                match args.scheme {
                    BcastScheme::Central => {
                        collectives::bcast_central(ctx, root, base, Some(&payload))?;
                    }
                    BcastScheme::NodeAware => {
                        collectives::bcast_node_aware(ctx, root, base, Some(&payload))?;
                    }
                    BcastScheme::NaiveP2p => {
                        for m in 1..np {
                            ctx.send(m, base, &payload)?;
                        }
                    }
                }
                // Counters close over the broadcast alone; the acks
                // below are measurement apparatus, not the operation.
                let after = ctx.stats();
                for m in 1..np {
                    ctx.recv(m, base + ACK_OFFSET)?;
                }
                let raw = t0.elapsed().as_secs_f64();
                if rep > 0 {
                    let corrected = (raw - ack_est).max(0.0);
                    let copies = after.remote_copies - before.remote_copies;
                    lines.push(format!(
                        "size={size} rep={rep} raw_s={raw:.9} corrected_s={corrected:.9} \
                         ack_est_s={ack_est:.9} copies={copies}"
                    ));
                }
            } else {
                let expected = bench_payload(args.seed, size, rep);
                let data = match args.scheme {
                    BcastScheme::Central => collectives::bcast_central(ctx, root, base, None)?,
                    BcastScheme::NodeAware => {
                        collectives::bcast_node_aware(ctx, root, base, None)?
                    }
                    BcastScheme::NaiveP2p => ctx.recv(root, base)?,
                };
                if data != expected {
                    return Err(Error::PayloadVerification(format!(
                        "broadcast payload differs at rank {me} for size {size} rep {rep}"
                    )));
                }
                ctx.send(root, base + ACK_OFFSET, &[0u8])?;
            }
        }
    }
    Ok(lines)
}

// ── agg ──────────────────────────────────────────────────────────────

fn agg_worker(ctx: &CommContext, args: &WorkerArgs) -> Result<Vec<String>> {
    let me = ctx.rank();
    let np = ctx.np();
    let mut windows = TagWindows(0);
    let mut lines = Vec::new();

    for &size in &args.sizes {
        if size == 0 || size % 8 != 0 {
            return Err(Error::InvalidJobSpec(format!(
                "agg sizes must be positive multiples of 8, got {size}"
            )));
        }
        let total = (size / 8) as usize;
        for rep in 0..=args.reps {
            let base = windows.next();

            // Starting gun: nobody begins repetition r until the root
            // has finished repetition r-1.
            let go = [rep as u8];
            let go_payload = (me == 0).then_some(&go[..]);
            collectives::bcast_central(ctx, 0, base + GO_OFFSET, go_payload)?;

            let (start, end) = collectives::block_range(me, np, total);
            let segment: Vec<f64> = (start..end)
                .map(|i| agg_element(args.seed, size, rep, i))
                .collect();

            let before = ctx.stats();
            let t0 = Instant::now();
            let gathered = collectives::agg(ctx, base, &segment, total)?;
            let elapsed = t0.elapsed().as_secs_f64();
            let after = ctx.stats();

            if me == 0 {
                let full = gathered.ok_or_else(|| {
                    Error::PayloadVerification("rank 0 got no gathered array".into())
                })?;
                if full.len() != total {
                    return Err(Error::PayloadVerification(format!(
                        "gathered {} elements, expected {total}",
                        full.len()
                    )));
                }
                for (i, v) in full.iter().enumerate() {
                    if *v != agg_element(args.seed, size, rep, i) {
                        return Err(Error::PayloadVerification(format!(
                            "gathered element {i} differs for size {size} rep {rep}"
                        )));
                    }
                }
            }
            if rep > 0 {
                let copies = after.remote_copies - before.remote_copies;
                let mut line = format!("size={size} rep={rep} copies={copies}");
                if me == 0 {
                    line.push_str(&format!(" time_s={elapsed:.9}"));
                }
                lines.push(line);
            }
        }
    }
    Ok(lines)
}

// ── Tests ────────────────────────────────────────────────────────────
