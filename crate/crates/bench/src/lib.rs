//! Criterion benchmarks for the numerical kernels: banded LU, stream solves,
//! smallest singular values and one nonlinear step. Run with
//! `cargo bench -p couette-bench`.
