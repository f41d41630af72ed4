//! Criterion benchmarks for `spikefed-core`; see `benches/`.
