//! Criterion benchmarks for the hot paths: convolution, one training step,
//! dense inference and scene rendering. Run with `cargo bench -p pixcond-bench`.
