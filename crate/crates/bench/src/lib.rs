//! Criterion benchmarks for the chromaholo kernels live in `benches/`.
