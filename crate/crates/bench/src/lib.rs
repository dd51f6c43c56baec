//! Criterion benchmarks for the fdr-core kernels live in `benches/`.
