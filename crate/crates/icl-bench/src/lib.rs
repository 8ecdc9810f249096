//! Benchmark-only crate. The measurements live in `benches/core_ops.rs`;
//! run them with `cargo bench -p icl-bench`.
