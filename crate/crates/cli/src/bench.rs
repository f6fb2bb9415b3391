//! Benchmark drivers: launch worker jobs, collect per-rank results,
//! summarize them into records, and write the CSV outputs.
//!
//! Each driver run is a real multi-process job: the configured number
//! of rank processes over virtual nodes, communicating through the file
//! system exactly as a production job would, with the loopback copier
//! standing in for the network. One job is launched per broadcast
//! scheme (p2p and agg need one job total); all sizes and repetitions
//! happen inside the job so process startup is paid once.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use fcomm::launcher::{run_job, CopierKind, CopierSpec, JobSpec, RankPlacement};
use fcomm::transport::TransportMode;
use fcomm::{Error, Result};

use crate::record::{self, BcastRepRecord, BenchRecord};
use crate::worker::{transport_name, BcastScheme, BenchKind};

/// Full description of one `fcomm bench` invocation.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub kind: BenchKind,
    pub sizes: Vec<u64>,
    /// Job sizes to sweep; one job runs per (np, scheme) combination.
    pub np_list: Vec<u32>,
    pub nodes: u32,
    pub transport: TransportMode,
    pub copier_latency_ms: u64,
    pub reps: u32,
    pub seed: u64,
    /// Broadcast schemes to measure; ignored for p2p and agg.
    pub schemes: Vec<BcastScheme>,
    pub out: PathBuf,
    /// Path of the `fcomm` binary to launch as the worker.
    pub worker_exe: PathBuf,
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidJobSpec(m));
        if self.sizes.is_empty() {
            return bad("at least one size is required".into());
        }
        if self.np_list.is_empty() {
            return bad("at least one np value is required".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        match self.kind {
            BenchKind::P2p | BenchKind::Bcast => {
                if self.np_list.iter().any(|&np| np < 2) {
                    return bad(format!("{} benchmark needs np >= 2", self.kind.as_str()));
                }
                if self.kind == BenchKind::P2p && self.sizes.contains(&0) {
                    return bad("p2p sizes must be positive".into());
                }
                if self.kind == BenchKind::Bcast && self.schemes.is_empty() {
                    return bad("bcast needs at least one scheme".into());
                }
            }
            BenchKind::Agg => {
                if self.np_list.contains(&0) {
                    return bad("agg benchmark needs np >= 1".into());
                }
                if let Some(s) = self.sizes.iter().find(|s| **s == 0 || **s % 8 != 0) {
                    return bad(format!("agg sizes must be positive multiples of 8, got {s}"));
                }
            }
        }
        Ok(())
    }
}

/// Run the configured benchmark end to end and write the CSV output
/// (plus the `.extras.csv` per-repetition file for broadcasts).
/// Returns the records in output (sorted) order.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut extras = Vec::new();
    for &np in &cfg.np_list {
        match cfg.kind {
            BenchKind::Bcast => {
                for &scheme in &cfg.schemes {
                    let results = run_worker_job(cfg, np, Some(scheme))?;
                    summarize_bcast(cfg, np, scheme, &results, &mut records, &mut extras)?;
                }
            }
            BenchKind::P2p => {
                let results = run_worker_job(cfg, np, None)?;
                summarize_p2p(cfg, np, &results, &mut records)?;
            }
            BenchKind::Agg => {
                let results = run_worker_job(cfg, np, None)?;
                summarize_agg(cfg, np, &results, &mut records)?;
            }
        }
    }
    sort_records(&mut records);
    extras.sort_by(|a, b| {
        (&a.scheme, a.np, a.msg_bytes, a.rep).cmp(&(&b.scheme, b.np, b.msg_bytes, b.rep))
    });
    record::write_csv(&cfg.out, &records)?;
    if cfg.kind == BenchKind::Bcast {
        record::write_extras(&cfg.out, &extras)?;
    }
    Ok(records)
}

/// Deterministic row order for the output CSV, independent of the
/// order jobs happened to run in.
fn sort_records(records: &mut [BenchRecord]) {
    records.sort_by(|a, b| {
        (&a.benchmark, &a.transport, &a.scheme, a.np, a.msg_bytes)
            .cmp(&(&b.benchmark, &b.transport, &b.scheme, b.np, b.msg_bytes))
    });
}

/// One parsed result line: `key=value` tokens.
type ResultLine = HashMap<String, String>;

/// Per-rank parsed result lines, indexed by rank.
struct JobResults {
    per_rank: Vec<Vec<ResultLine>>,
}

impl JobResults {
    /// Lines from one rank matching a size, in repetition order.
    fn lines_for(&self, rank: u32, size: u64) -> Vec<&ResultLine> {
        self.per_rank[rank as usize]
            .iter()
            .filter(|l| l.get("size").map(String::as_str) == Some(size.to_string().as_str()))
            .collect()
    }
}

fn field_f64(line: &ResultLine, key: &str) -> Result<f64> {
    line.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::JobFailed(format!("result line missing numeric field {key:?}")))
}

fn field_u64(line: &ResultLine, key: &str) -> Result<u64> {
    line.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::JobFailed(format!("result line missing integer field {key:?}")))
}

/// Launch one worker job and parse every rank's result file.
fn run_worker_job(cfg: &BenchConfig, np: u32, scheme: Option<BcastScheme>) -> Result<JobResults> {
    let scratch = tempfile::tempdir()?;
    let workdir = scratch.path().join("job");
    let result_dir = scratch.path().join("results");
    fs::create_dir_all(&result_dir)?;

    let sizes = cfg
        .sizes
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut program: Vec<String> = vec![
        cfg.worker_exe.display().to_string(),
        "worker".into(),
        cfg.kind.as_str().into(),
        "--sizes".into(),
        sizes,
        "--reps".into(),
        cfg.reps.to_string(),
        "--seed".into(),
        cfg.seed.to_string(),
        "--transport".into(),
        transport_name(cfg.transport).into(),
        "--copier-latency-ms".into(),
        cfg.copier_latency_ms.to_string(),
        "--result-dir".into(),
        result_dir.display().to_string(),
    ];
    if let Some(s) = scheme {
        program.push("--scheme".into());
        program.push(s.as_str().into());
    }

    let spec = JobSpec {
        np,
        nodes: cfg.nodes,
        placement: RankPlacement::Block,
        transport: cfg.transport,
        copier: CopierSpec {
            kind: CopierKind::Loopback,
            latency_ms: cfg.copier_latency_ms,
            bandwidth_bytes_per_s: 0,
            connect_timeout_s: 10,
        },
        workdir,
        timeout_s: 600,
        keep_files: false,
        program,
    };
    let report = run_job(&spec)?;
    if !report.success() {
        return Err(Error::JobFailed(format!(
            "worker job ended badly: exit codes {:?}, killed {:?}",
            report.exit_codes, report.killed
        )));
    }
    if report.residual_files > 0 {
        return Err(Error::JobFailed(format!(
            "{} files left in inboxes after the job — messages leaked",
            report.residual_files
        )));
    }

    let mut per_rank = Vec::with_capacity(np as usize);
    for rank in 0..np {
        let path = result_dir.join(format!("rank{rank}.txt"));
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::JobFailed(format!("missing result file for rank {rank}: {e}"))
        })?;
        per_rank.push(parse_result_lines(&text));
    }
    Ok(JobResults { per_rank })
}

fn parse_result_lines(text: &str) -> Vec<ResultLine> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .filter_map(|tok| tok.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

// ── Summaries ────────────────────────────────────────────────────────

fn expect_reps(lines: &[&ResultLine], reps: u32, what: &str) -> Result<()> {
    if lines.len() != reps as usize {
        return Err(Error::JobFailed(format!(
            "expected {reps} repetitions of {what}, found {}",
            lines.len()
        )));
    }
    Ok(())
}

fn summarize_p2p(
    cfg: &BenchConfig,
    np: u32,
    results: &JobResults,
    records: &mut Vec<BenchRecord>,
) -> Result<()> {
    for &size in &cfg.sizes {
        let lines = results.lines_for(0, size);
        expect_reps(&lines, cfg.reps, "p2p timing")?;
        let oneway: Vec<f64> = lines
            .iter()
            .map(|l| field_f64(l, "oneway_s"))
            .collect::<Result<_>>()?;
        let copies = lines
            .iter()
            .map(|l| field_u64(l, "copies"))
            .collect::<Result<Vec<_>>>()?;
        let median_s = record::median(&oneway);
        records.push(BenchRecord {
            benchmark: "p2p".into(),
            transport: transport_name(cfg.transport).into(),
            scheme: "pingpong".into(),
            np,
            nodes: effective_nodes(cfg, np),
            msg_bytes: size,
            repetitions: cfg.reps,
            median_s,
            bandwidth_bps: Some(size as f64 / median_s),
            remote_copies: copies.into_iter().max().unwrap_or(0),
        });
    }
    Ok(())
}

fn summarize_bcast(
    cfg: &BenchConfig,
    np: u32,
    scheme: BcastScheme,
    results: &JobResults,
    records: &mut Vec<BenchRecord>,
    extras: &mut Vec<BcastRepRecord>,
) -> Result<()> {
    for &size in &cfg.sizes {
        let lines = results.lines_for(0, size);
        expect_reps(&lines, cfg.reps, "bcast timing")?;
        let mut corrected = Vec::new();
        let mut copies = 0u64;
        for line in &lines {
            let raw_s = field_f64(line, "raw_s")?;
            let corrected_s = field_f64(line, "corrected_s")?;
            let ack_est_s = field_f64(line, "ack_est_s")?;
            copies = copies.max(field_u64(line, "copies")?);
            corrected.push(corrected_s);
            extras.push(BcastRepRecord {
                benchmark: "bcast".into(),
                transport: transport_name(cfg.transport).into(),
                scheme: scheme.as_str().into(),
                np,
                nodes: effective_nodes(cfg, np),
                msg_bytes: size,
                rep: field_u64(line, "rep")? as u32,
                raw_s,
                corrected_s,
                ack_est_s,
            });
        }
        records.push(BenchRecord {
            benchmark: "bcast".into(),
            transport: transport_name(cfg.transport).into(),
            scheme: scheme.as_str().into(),
            np,
            nodes: effective_nodes(cfg, np),
            msg_bytes: size,
            repetitions: cfg.reps,
            median_s: record::median(&corrected),
            bandwidth_bps: None,
            remote_copies: copies,
        });
    }
    Ok(())
}

fn summarize_agg(
    cfg: &BenchConfig,
    np: u32,
    results: &JobResults,
    records: &mut Vec<BenchRecord>,
) -> Result<()> {
    for &size in &cfg.sizes {
        let root_lines = results.lines_for(0, size);
        expect_reps(&root_lines, cfg.reps, "agg timing")?;
        let times: Vec<f64> = root_lines
            .iter()
            .map(|l| field_f64(l, "time_s"))
            .collect::<Result<_>>()?;
        // Copies for one operation: every rank's delta for the first
        // measured repetition, summed (the tree spreads copying over
        // all senders, so no single rank sees the whole cost).
        let mut copies = 0u64;
        for rank in 0..np {
            if let Some(first) = results.lines_for(rank, size).first() {
                copies += field_u64(first, "copies")?;
            }
        }
        let median_s = record::median(&times);
        records.push(BenchRecord {
            benchmark: "agg".into(),
            transport: transport_name(cfg.transport).into(),
            scheme: "binomial".into(),
            np,
            nodes: effective_nodes(cfg, np),
            msg_bytes: size,
            repetitions: cfg.reps,
            median_s,
            bandwidth_bps: Some(size as f64 / median_s),
            remote_copies: copies,
        });
    }
    Ok(())
}

/// Nodes as actually laid out (requests beyond np are clamped).
fn effective_nodes(cfg: &BenchConfig, np: u32) -> u32 {
    cfg.nodes.min(np).max(1)
}

/// Default sizes per benchmark kind, used when the CLI gives none.
pub fn default_sizes(kind: BenchKind) -> Vec<u64> {
    match kind {
        BenchKind::P2p => vec![16, 256, 4096, 65536, 1_048_576],
        BenchKind::Bcast => vec![32],
        BenchKind::Agg => vec![131_072, 1_048_576],
    }
}

/// Default job size per benchmark kind.
pub fn default_np(kind: BenchKind) -> u32 {
    match kind {
        BenchKind::P2p => 2,
        BenchKind::Bcast | BenchKind::Agg => 8,
    }
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: BenchKind) -> BenchConfig {
        BenchConfig {
            kind,
            sizes: default_sizes(kind),
            np_list: vec![default_np(kind)],
            nodes: 1,
            transport: TransportMode::SharedFs,
            copier_latency_ms: 0,
            reps: 4,
            seed: 42,
            schemes: vec![BcastScheme::Central],
            out: PathBuf::from("/tmp/out.csv"),
            worker_exe: PathBuf::from("fcomm"),
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = config(BenchKind::P2p);
        c.np_list = vec![2, 1];
        assert!(c.validate().is_err());

        let mut c = config(BenchKind::P2p);
        c.np_list.clear();
        assert!(c.validate().is_err());

        let mut c = config(BenchKind::Agg);
        c.sizes = vec![12]; // not a multiple of 8
        assert!(c.validate().is_err());

        let mut c = config(BenchKind::Bcast);
        c.schemes.clear();
        assert!(c.validate().is_err());

        let mut c = config(BenchKind::P2p);
        c.sizes.clear();
        assert!(c.validate().is_err());

        let mut c = config(BenchKind::P2p);
        c.reps = 0;
        assert!(c.validate().is_err());

        assert!(config(BenchKind::Agg).validate().is_ok());
    }

    #[test]
    fn result_line_parsing() {
        let lines = parse_result_lines("size=16 rep=1 oneway_s=0.5 copies=2\n\n");
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0]["size"], "16");
        assert_eq!(field_f64(&lines[0], "oneway_s").unwrap(), 0.5);
        assert_eq!(field_u64(&lines[0], "copies").unwrap(), 2);
        assert!(field_f64(&lines[0], "missing").is_err());
    }

    #[test]
    fn lines_for_filters_by_size() {
        let results = JobResults {
            per_rank: vec![parse_result_lines(
                "size=16 rep=1 x=1\nsize=32 rep=1 x=2\nsize=16 rep=2 x=3\n",
            )],
        };
        let hits = results.lines_for(0, 16);
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|l| l["size"] == "16"));
    }

    #[test]
    fn records_sort_by_scheme_then_np_then_size() {
        let mk = |scheme: &str, np: u32, size: u64| BenchRecord {
            benchmark: "bcast".into(),
            transport: "local".into(),
            scheme: scheme.into(),
            np,
            nodes: 1,
            msg_bytes: size,
            repetitions: 1,
            median_s: 0.0,
            bandwidth_bps: None,
            remote_copies: 0,
        };
        let mut rows = vec![
            mk("node_aware", 4, 32),
            mk("central", 4, 64),
            mk("central", 2, 32),
            mk("central", 4, 32),
        ];
        sort_records(&mut rows);
        let key: Vec<(String, u32, u64)> = rows
            .into_iter()
            .map(|r| (r.scheme, r.np, r.msg_bytes))
            .collect();
        assert_eq!(
            key,
            vec![
                ("central".into(), 2, 32),
                ("central".into(), 4, 32),
                ("central".into(), 4, 64),
                ("node_aware".into(), 4, 32),
            ]
        );
    }
}
