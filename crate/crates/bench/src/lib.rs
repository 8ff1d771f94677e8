//! Benchmarks for the pathdual kernels live in `benches/`.
