//! Benchmark-only package; see `benches/core.rs` for the criterion suites.
