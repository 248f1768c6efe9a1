//! Benchmark host crate; the kernels live in `benches/kernels.rs`.
