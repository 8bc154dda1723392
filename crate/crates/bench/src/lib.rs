//! Criterion benchmarks for the codec and the inference pipeline live in `benches/`.
