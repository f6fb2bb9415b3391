//! Benchmark result records and their CSV serialization.
//!
//! One [`BenchRecord`] summarizes one (benchmark, configuration, size)
//! cell: the median over repetitions plus the copy counters that
//! explain it. Broadcast runs also produce per-repetition rows with the
//! raw and ack-corrected timings, written to a sibling `.extras.csv`
//! next to the main file so the main schema stays fixed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fcomm::Result;

/// Column header of the main results file. Fixed: downstream tooling
/// keys on these exact names.
pub const CSV_HEADER: &str =
    "benchmark,transport,scheme,np,nodes,msg_bytes,repetitions,median_s,bandwidth_Bps,remote_copies";

/// Column header of the per-repetition broadcast extras file.
pub const EXTRAS_HEADER: &str =
    "benchmark,transport,scheme,np,nodes,msg_bytes,rep,raw_s,corrected_s,ack_est_s";

/// One summarized benchmark measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub benchmark: String,
    pub transport: String,
    pub scheme: String,
    pub np: u32,
    pub nodes: u32,
    pub msg_bytes: u64,
    pub repetitions: u32,
    pub median_s: f64,
    /// `msg_bytes / median_s`; absent where a single bandwidth figure
    /// would be misleading (broadcast fan-out).
    pub bandwidth_bps: Option<f64>,
    /// Copier invocations attributable to one operation.
    pub remote_copies: u64,
}

impl BenchRecord {
    fn csv_row(&self) -> String {
        let bandwidth = match self.bandwidth_bps {
            Some(b) => format!("{b:.1}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{},{:.9},{},{}",
            self.benchmark,
            self.transport,
            self.scheme,
            self.np,
            self.nodes,
            self.msg_bytes,
            self.repetitions,
            self.median_s,
            bandwidth,
            self.remote_copies
        )
    }
}

/// One repetition of a broadcast run: raw wall time of the operation
/// plus ack gather, the ack-cost estimate from calibration, and the
/// corrected time (raw minus estimate, floored at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct BcastRepRecord {
    pub benchmark: String,
    pub transport: String,
    pub scheme: String,
    pub np: u32,
    pub nodes: u32,
    pub msg_bytes: u64,
    pub rep: u32,
    pub raw_s: f64,
    pub corrected_s: f64,
    pub ack_est_s: f64,
}

impl BcastRepRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.9},{:.9},{:.9}",
            self.benchmark,
            self.transport,
            self.scheme,
            self.np,
            self.nodes,
            self.msg_bytes,
            self.rep,
            self.raw_s,
            self.corrected_s,
            self.ack_est_s
        )
    }
}

/// Write the main results file (header + one row per record).
pub fn write_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Path of the extras file that accompanies `out`:
/// `results.csv` → `results.extras.csv`.
pub fn extras_path(out: &Path) -> PathBuf {
    out.with_extension("extras.csv")
}

/// Write the per-repetition extras file next to the main results.
pub fn write_extras(out: &Path, rows: &[BcastRepRecord]) -> Result<()> {
    let mut text = String::from(EXTRAS_HEADER);
    text.push('\n');
    for r in rows {
        writeln!(text, "{}", r.csv_row()).unwrap();
    }
    fs::write(extras_path(out), text)?;
    Ok(())
}

/// Median of a sample: middle element, or the mean of the central pair
/// for even sizes. Panics on an empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BenchRecord {
        BenchRecord {
            benchmark: "p2p".into(),
            transport: "local".into(),
            scheme: "pingpong".into(),
            np: 2,
            nodes: 2,
            msg_bytes: 1024,
            repetitions: 4,
            median_s: 0.001953125,
            bandwidth_bps: Some(524288.0),
            remote_copies: 2,
        }
    }

    #[test]
    fn median_odd_even_and_unsorted() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 8.0]), 3.0);
    }

    #[test]
    fn csv_layout_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&path, &[sample()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "benchmark,transport,scheme,np,nodes,msg_bytes,repetitions,median_s,bandwidth_Bps,remote_copies"
        );
        assert_eq!(
            lines.next().unwrap(),
            "p2p,local,pingpong,2,2,1024,4,0.001953125,524288.0,2"
        );
        assert!(lines.next().is_none());
    }

    #[test]
    fn missing_bandwidth_yields_empty_field() {
        let mut rec = sample();
        rec.benchmark = "bcast".into();
        rec.bandwidth_bps = None;
        let row = rec.csv_row();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 10);
        assert_eq!(fields[8], "");
    }

    #[test]
    fn extras_file_sits_next_to_main_output() {
        assert_eq!(
            extras_path(Path::new("/tmp/run/results.csv")),
            Path::new("/tmp/run/results.extras.csv")
        );
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("b.csv");
        let row = BcastRepRecord {
            benchmark: "bcast".into(),
            transport: "local".into(),
            scheme: "node_aware".into(),
            np: 8,
            nodes: 4,
            msg_bytes: 32,
            rep: 1,
            raw_s: 0.080,
            corrected_s: 0.070,
            ack_est_s: 0.010,
        };
        write_extras(&out, &[row]).unwrap();
        let text = fs::read_to_string(dir.path().join("b.extras.csv")).unwrap();
        assert!(text.starts_with(EXTRAS_HEADER));
        assert!(text.contains("bcast,local,node_aware,8,4,32,1,0.080000000,0.070000000,0.010000000"));
    }
}
