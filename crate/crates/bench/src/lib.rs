//! Criterion micro-benchmark crate for the fcomm messaging kernel.
//!
//! All content lives in `benches/`; this library exists only to anchor
//! the package. Run with `cargo bench -p fcomm-bench`.
