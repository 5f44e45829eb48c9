//! Criterion benchmarks for the simulator, path search and network passes.
//! Run with `cargo bench -p patrol-bench`.
