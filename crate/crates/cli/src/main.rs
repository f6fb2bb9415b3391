//! `fcomm` — run file-based message-passing jobs and benchmarks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fcomm::launcher::{plan_layout, run_job, JobSpec};
use fcomm::Result;

use fcomm_cli::bench::{self, BenchConfig};
use fcomm_cli::worker::{self, BcastScheme, BenchKind, WorkerArgs};

#[derive(Parser)]
#[command(
    name = "fcomm",
    version,
    about = "File-based message passing: job launcher and communication benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Launch a job described by a config file and wait for it
    Run { config: PathBuf },
    /// Check a job config and print the launch plan without running it
    Validate { config: PathBuf },
    /// Measure messaging performance and write a CSV report
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
    /// Per-rank benchmark worker (spawned by `bench`; not for direct use)
    #[command(hide = true)]
    Worker(WorkerCli),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Point-to-point ping-pong between two ranks
    P2p(BenchArgs),
    /// Broadcast from rank 0 to all ranks
    Bcast(BenchArgs),
    /// Aggregation of a distributed array to rank 0
    Agg(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Message sizes in bytes (comma separated)
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    /// Numbers of ranks to sweep (comma separated)
    #[arg(long, value_delimiter = ',')]
    np: Option<Vec<u32>>,
    /// Number of virtual nodes
    #[arg(long, default_value_t = 1)]
    nodes: u32,
    /// Inbox layout: "shared" (one directory) or "local" (per node)
    #[arg(long, default_value = "shared")]
    transport: String,
    /// Loopback copier latency per file copy, in milliseconds
    #[arg(long, default_value_t = 0)]
    copier_latency_ms: u64,
    /// Output CSV path
    #[arg(long, default_value = "fcomm-bench.csv")]
    out: PathBuf,
    /// Measured repetitions per size (after one warmup)
    #[arg(long, default_value_t = 4)]
    reps: u32,
    /// Seed for deterministic payloads
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Broadcast schemes (comma separated: central,node_aware,naive_p2p)
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
}

#[derive(Args)]
struct WorkerCli {
    /// Benchmark kind: p2p | bcast | agg
    kind: String,
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u64>,
    #[arg(long)]
    reps: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    transport: String,
    #[arg(long, default_value_t = 0)]
    copier_latency_ms: u64,
    #[arg(long, default_value_t = 0)]
    copier_bandwidth: u64,
    #[arg(long, default_value = "central")]
    scheme: String,
    #[arg(long)]
    result_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fcomm: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config } => {
            let spec = JobSpec::read_file(&config)?;
            let report = run_job(&spec)?;
            let ok = report.success();
            println!(
                "job {} in {:.3} s: np {}, exit codes {:?}, {} killed, {} residual files",
                if ok { "succeeded" } else { "FAILED" },
                report.elapsed.as_secs_f64(),
                spec.np,
                report.exit_codes,
                report.killed.len(),
                report.residual_files,
            );
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Validate { config } => {
            let spec = JobSpec::read_file(&config)?;
            let plan = plan_layout(&spec)?;
            println!(
                "config ok: np {} over {} node(s), {:?} placement, {:?} transport",
                spec.np,
                spec.effective_nodes(),
                spec.placement,
                spec.transport,
            );
            println!("  workdir  {}", spec.workdir.display());
            println!("  map file {}", plan.map_file.display());
            for dir in &plan.node_dirs {
                println!("  inbox    {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench { which } => {
            let (kind, args) = match which {
                BenchCmd::P2p(a) => (BenchKind::P2p, a),
                BenchCmd::Bcast(a) => (BenchKind::Bcast, a),
                BenchCmd::Agg(a) => (BenchKind::Agg, a),
            };
            let cfg = to_bench_config(kind, args)?;
            let records = bench::run_bench(&cfg)?;
            for r in &records {
                let bandwidth = match r.bandwidth_bps {
                    Some(b) => format!(", {:.2} MB/s", b / 1e6),
                    None => String::new(),
                };
                println!(
                    "{} {} {} np={} nodes={} {} B: median {:.6} s{}, {} remote copies",
                    r.benchmark,
                    r.transport,
                    r.scheme,
                    r.np,
                    r.nodes,
                    r.msg_bytes,
                    r.median_s,
                    bandwidth,
                    r.remote_copies,
                );
            }
            println!("wrote {}", cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Worker(w) => {
            let args = to_worker_args(w)?;
            worker::run_worker(&args).map_err(|e| {
                let rank = std::env::var(fcomm::launcher::ENV_RANK)
                    .unwrap_or_else(|_| "?".into());
                fcomm::Error::JobFailed(format!("worker rank {rank}: {e}"))
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn to_bench_config(kind: BenchKind, args: BenchArgs) -> Result<BenchConfig> {
    let schemes = match args.schemes {
        Some(names) => names
            .iter()
            .map(|s| BcastScheme::parse(s))
            .collect::<Result<Vec<_>>>()?,
        None => vec![BcastScheme::NodeAware, BcastScheme::Central, BcastScheme::NaiveP2p],
    };
    Ok(BenchConfig {
        kind,
        sizes: args.sizes.unwrap_or_else(|| bench::default_sizes(kind)),
        np_list: args.np.unwrap_or_else(|| vec![bench::default_np(kind)]),
        nodes: args.nodes,
        transport: worker::parse_transport(&args.transport)?,
        copier_latency_ms: args.copier_latency_ms,
        reps: args.reps,
        seed: args.seed,
        schemes,
        out: args.out,
        worker_exe: std::env::current_exe()?,
    })
}

fn to_worker_args(w: WorkerCli) -> Result<WorkerArgs> {
    Ok(WorkerArgs {
        kind: BenchKind::parse(&w.kind)?,
        scheme: BcastScheme::parse(&w.scheme)?,
        sizes: w.sizes,
        reps: w.reps,
        seed: w.seed,
        transport: worker::parse_transport(&w.transport)?,
        copier_latency_ms: w.copier_latency_ms,
        copier_bandwidth: w.copier_bandwidth,
        result_dir: w.result_dir,
    })
}
