//! Criterion benchmarks for the simulation and detection pipeline live in `benches/`.
