//! Library side of the `fcomm` command-line tool: benchmark drivers,
//! result records, and the per-rank worker programs the drivers launch.
//!
//! The binary in `main.rs` is a thin clap wrapper over this crate so
//! integration tests can drive the same code paths directly.

pub mod bench;
pub mod record;
pub mod worker;
