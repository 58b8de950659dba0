//! Benchmarks for the facegraph pipeline live in `benches/`.
