//! Benchmark-only crate; see `benches/scheduler.rs`.
