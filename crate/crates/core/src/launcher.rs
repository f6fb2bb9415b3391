//! Process launcher: one process per rank across virtual nodes.
//!
//! A *virtual node* is a directory standing in for a machine, so a
//! multi-node job can run (and be tested) on one box: node-private
//! inbox directories become sibling directories under the job's work
//! directory, and the cross-node copier shuttles files between them.
//!
//! The launcher writes the host map, exports each rank's identity
//! through the environment, spawns the rank programs, waits with a
//! deadline, kills stragglers, audits leftover files, and tears down
//! what it created.
//!
//! # Job configuration
//!
//! A job is described by a `key = value` text file; `#` starts a
//! comment. Keys:
//!
//! ```text
//! np            = 8                  # required: number of ranks
//! program       = ./worker --flag    # required: command per rank
//! workdir       = /tmp/job0          # required: job scratch root
//! nodes         = 4                  # virtual nodes (default 1)
//! placement     = block              # block | round_robin
//! transport     = shared             # shared | local
//! copier.kind   = loopback           # loopback | scp
//! copier.latency_ms = 5              # loopback: per-file latency
//! copier.bandwidth_bytes_per_s = 0   # loopback: 0 = unlimited
//! copier.connect_timeout_s = 10      # scp connect timeout
//! timeout_s     = 60                 # kill ranks after this (0 = none)
//! keep_files    = false              # keep workdir for post-mortem
//! ```
//!
//! More nodes than ranks is clamped to one node per rank.
//!
//! # Environment contract
//!
//! Each rank process receives:
//!
//! ```text
//! FCOMM_RANK      its rank id
//! FCOMM_NP        total ranks
//! FCOMM_MAP_FILE  path to the host map file
//! FCOMM_MSG_DIR   its inbox directory
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use crate::error::Error;
use crate::msgcore::RankId;
use crate::topology::{HostRankMap, Placement};
use crate::transport::{Copier, TransportMode};
use crate::Result;

/// Environment variable carrying the process's rank id.
pub const ENV_RANK: &str = "FCOMM_RANK";
/// Environment variable carrying the job size.
pub const ENV_NP: &str = "FCOMM_NP";
/// Environment variable pointing at the host map file.
pub const ENV_MAP_FILE: &str = "FCOMM_MAP_FILE";
/// Environment variable pointing at the rank's inbox directory.
pub const ENV_MSG_DIR: &str = "FCOMM_MSG_DIR";

/// Host map file name inside the work directory.
pub const MAP_FILE_NAME: &str = "hostmap.txt";

/// How ranks are assigned to virtual nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPlacement {
    /// Contiguous balanced blocks: node 0 gets ranks 0..k, and so on.
    #[default]
    Block,
    /// Rank `r` goes to node `r mod nodes`.
    RoundRobin,
}

/// Copier selection and tuning from the job config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopierSpec {
    pub kind: CopierKind,
    pub latency_ms: u64,
    pub bandwidth_bytes_per_s: u64,
    pub connect_timeout_s: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CopierKind {
    #[default]
    Loopback,
    Scp,
}

impl Default for CopierSpec {
    fn default() -> Self {
        CopierSpec {
            kind: CopierKind::Loopback,
            latency_ms: 0,
            bandwidth_bytes_per_s: 0,
            connect_timeout_s: 10,
        }
    }
}

impl CopierSpec {
    /// Materialize the copier this spec describes.
    pub fn build(&self) -> Copier {
        match self.kind {
            CopierKind::Scp => Copier::Scp {
                connect_timeout_s: self.connect_timeout_s,
            },
            CopierKind::Loopback => Copier::Loopback {
                latency: Duration::from_millis(self.latency_ms),
                bandwidth_bytes_per_s: (self.bandwidth_bytes_per_s > 0)
                    .then_some(self.bandwidth_bytes_per_s),
            },
        }
    }
}

/// A complete job description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub np: u32,
    pub nodes: u32,
    pub placement: RankPlacement,
    pub transport: TransportMode,
    pub copier: CopierSpec,
    pub workdir: PathBuf,
    pub timeout_s: u64,
    pub keep_files: bool,
    /// Command line run once per rank (whitespace-split argv).
    pub program: Vec<String>,
}

impl JobSpec {
    /// Parse the `key = value` config format.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, why: String| Error::InvalidJobSpec(format!("line {line}: {why}"));

        let mut np = None;
        let mut workdir = None;
        let mut program = None;
        let mut spec = JobSpec {
            np: 0,
            nodes: 1,
            placement: RankPlacement::Block,
            transport: TransportMode::SharedFs,
            copier: CopierSpec::default(),
            workdir: PathBuf::new(),
            timeout_s: 60,
            keep_files: false,
            program: Vec::new(),
        };

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(line, "expected key = value".into()))?;
            let key = key.trim();
            let value = value.trim();
            let int = |what: &str| -> Result<u64> {
                value
                    .parse::<u64>()
                    .map_err(|e| bad(line, format!("bad {what}: {e}")))
            };
            match key {
                "np" => np = Some(int("np")? as u32),
                "nodes" => spec.nodes = int("nodes")? as u32,
                "placement" => {
                    spec.placement = match value {
                        "block" => RankPlacement::Block,
                        "round_robin" => RankPlacement::RoundRobin,
                        other => return Err(bad(line, format!("unknown placement {other:?}"))),
                    }
                }
                "transport" => {
                    spec.transport = match value {
                        "shared" => TransportMode::SharedFs,
                        "local" => TransportMode::LocalFs,
                        other => return Err(bad(line, format!("unknown transport {other:?}"))),
                    }
                }
                "copier.kind" => {
                    spec.copier.kind = match value {
                        "loopback" => CopierKind::Loopback,
                        "scp" => CopierKind::Scp,
                        other => return Err(bad(line, format!("unknown copier {other:?}"))),
                    }
                }
                "copier.latency_ms" => spec.copier.latency_ms = int("latency")?,
                "copier.bandwidth_bytes_per_s" => {
                    spec.copier.bandwidth_bytes_per_s = int("bandwidth")?
                }
                "copier.connect_timeout_s" => {
                    spec.copier.connect_timeout_s = int("connect timeout")? as u32
                }
                "workdir" => workdir = Some(PathBuf::from(value)),
                "timeout_s" => spec.timeout_s = int("timeout")?,
                "keep_files" => {
                    spec.keep_files = match value {
                        "true" => true,
                        "false" => false,
                        other => return Err(bad(line, format!("bad boolean {other:?}"))),
                    }
                }
                "program" => {
                    program = Some(value.split_whitespace().map(str::to_string).collect())
                }
                other => return Err(bad(line, format!("unknown key {other:?}"))),
            }
        }

        spec.np = np.ok_or_else(|| Error::InvalidJobSpec("missing required key np".into()))?;
        spec.workdir =
            workdir.ok_or_else(|| Error::InvalidJobSpec("missing required key workdir".into()))?;
        spec.program =
            program.ok_or_else(|| Error::InvalidJobSpec("missing required key program".into()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Read and parse a config file.
    pub fn read_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Structural checks beyond syntax.
    pub fn validate(&self) -> Result<()> {
        if self.np == 0 {
            return Err(Error::InvalidJobSpec("np must be at least 1".into()));
        }
        if self.nodes == 0 {
            return Err(Error::InvalidJobSpec("nodes must be at least 1".into()));
        }
        if self.program.is_empty() {
            return Err(Error::InvalidJobSpec("program must not be empty".into()));
        }
        Ok(())
    }

    /// Virtual nodes actually used: asking for more nodes than ranks
    /// clamps to one rank per node.
    pub fn effective_nodes(&self) -> u32 {
        self.nodes.min(self.np)
    }
}

/// The file-system layout a job will run in.
#[derive(Debug, Clone)]
pub struct LaunchPlan {
    pub map: HostRankMap,
    pub map_file: PathBuf,
    /// Distinct inbox directories, in node order.
    pub node_dirs: Vec<PathBuf>,
}

/// Compute the layout for a job: node names, inbox directories, and the
/// rank map. Pure — creates nothing on disk.
pub fn plan_layout(spec: &JobSpec) -> Result<LaunchPlan> {
    let nodes = spec.effective_nodes();
    let node_dir = |i: u32| -> PathBuf {
        match spec.transport {
            TransportMode::SharedFs => spec.workdir.join("shared"),
            TransportMode::LocalFs => spec.workdir.join(format!("vnode{i}")),
        }
    };

    let mut entries: Vec<(RankId, u32)> = Vec::with_capacity(spec.np as usize);
    match spec.placement {
        RankPlacement::Block => {
            for node in 0..nodes {
                let (start, end) = crate::collectives::block_range(node, nodes, spec.np as usize);
                for rank in start..end {
                    entries.push((rank as RankId, node));
                }
            }
            entries.sort_unstable();
        }
        RankPlacement::RoundRobin => {
            for rank in 0..spec.np {
                entries.push((rank, rank % nodes));
            }
        }
    }

    let placements = entries
        .iter()
        .map(|&(_, node)| Placement {
            node: format!("vnode{node}"),
            msg_dir: node_dir(node),
        })
        .collect();

    let mut node_dirs: Vec<PathBuf> = Vec::new();
    for i in 0..nodes {
        let d = node_dir(i);
        if !node_dirs.contains(&d) {
            node_dirs.push(d);
        }
    }

    Ok(LaunchPlan {
        map: HostRankMap::new(placements)?,
        map_file: spec.workdir.join(MAP_FILE_NAME),
        node_dirs,
    })
}

/// What happened to a finished (or killed) job.
#[derive(Debug)]
pub struct JobReport {
    /// Per-rank exit codes; `None` means killed by a signal (including
    /// our own timeout kill).
    pub exit_codes: Vec<Option<i32>>,
    /// Ranks forcibly killed when the deadline passed.
    pub killed: Vec<RankId>,
    /// Files still present in inbox directories after all ranks ended.
    /// A clean run leaves zero: every message consumed, nothing staged.
    pub residual_files: usize,
    pub elapsed: Duration,
}

impl JobReport {
    /// All ranks exited zero and none were killed.
    pub fn success(&self) -> bool {
        self.killed.is_empty() && self.exit_codes.iter().all(|c| *c == Some(0))
    }
}

/// Run a job start to finish: prepare the layout, spawn every rank,
/// wait (killing stragglers at the deadline), audit leftovers, and tear
/// down the work directory unless `keep_files` is set.
pub fn run_job(spec: &JobSpec) -> Result<JobReport> {
    spec.validate()?;
    let plan = plan_layout(spec)?;

    let created_workdir = !spec.workdir.exists();
    fs::create_dir_all(&spec.workdir)?;
    for dir in &plan.node_dirs {
        fs::create_dir_all(dir)?;
    }
    plan.map.write_file(&plan.map_file)?;

    let result = spawn_and_wait(spec, &plan);

    // Audit before teardown; tear down even when spawning failed.
    let residual = count_files(&plan.node_dirs);
    if !spec.keep_files {
        for dir in &plan.node_dirs {
            let _ = fs::remove_dir_all(dir);
        }
        let _ = fs::remove_file(&plan.map_file);
        if created_workdir {
            let _ = fs::remove_dir_all(&spec.workdir);
        }
    }

    let mut report = result?;
    report.residual_files = residual;
    Ok(report)
}

fn spawn_and_wait(spec: &JobSpec, plan: &LaunchPlan) -> Result<JobReport> {
    let start = Instant::now();
    let mut children: Vec<(RankId, Child)> = Vec::with_capacity(spec.np as usize);

    for rank in 0..spec.np {
        let spawned = Command::new(&spec.program[0])
            .args(&spec.program[1..])
            .env(ENV_RANK, rank.to_string())
            .env(ENV_NP, spec.np.to_string())
            .env(ENV_MAP_FILE, &plan.map_file)
            .env(ENV_MSG_DIR, plan.map.msg_dir(rank)?)
            .stdin(Stdio::null())
            .spawn();
        match spawned {
            Ok(child) => children.push((rank, child)),
            Err(e) => {
                // Take down whatever already started before reporting.
                for (_, mut child) in children {
                    let _ = child.kill();
                    let _ = child.wait();
                }
                return Err(Error::SpawnFailed {
                    rank,
                    reason: e.to_string(),
                });
            }
        }
    }

    let deadline = (spec.timeout_s > 0)
        .then(|| start + Duration::from_secs(spec.timeout_s));
    let mut exit_codes: Vec<Option<Option<i32>>> = vec![None; spec.np as usize];
    let mut killed = Vec::new();

    loop {
        let mut pending = false;
        for (rank, child) in children.iter_mut() {
            if exit_codes[*rank as usize].is_some() {
                continue;
            }
            match child.try_wait()? {
                Some(status) => exit_codes[*rank as usize] = Some(status.code()),
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        if let Some(d) = deadline {
            if Instant::now() >= d {
                for (rank, child) in children.iter_mut() {
                    if exit_codes[*rank as usize].is_none() {
                        let _ = child.kill();
                        let status = child.wait()?;
                        exit_codes[*rank as usize] = Some(status.code());
                        killed.push(*rank);
                    }
                }
                break;
            }
        }
        std::thread::sleep(Duration::from_millis(20));
    }

    Ok(JobReport {
        exit_codes: exit_codes.into_iter().map(Option::unwrap).collect(),
        killed,
        residual_files: 0, // filled in by run_job after the audit
        elapsed: start.elapsed(),
    })
}

fn count_files(dirs: &[PathBuf]) -> usize {
    let mut n = 0;
    for dir in dirs {
        if let Ok(entries) = fs::read_dir(dir) {
            n += entries.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).count();
        }
    }
    n
}

// ── Tests ────────────────────────────────────────────────────────────
