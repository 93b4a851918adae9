//! Criterion benchmarks for the optimization and co-design kernels; see
//! `benches/`.
