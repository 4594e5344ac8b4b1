//! Criterion benchmarks for the synthesis and simulation paths. See `benches/`.
