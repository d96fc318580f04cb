//! Criterion benchmarks for the `varigan` core; run with `cargo bench -p varigan-bench`.
