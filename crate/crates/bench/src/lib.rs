//! Criterion benchmarks for the feature, network and scoring stages; see `benches/`.
