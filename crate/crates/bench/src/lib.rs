//! Criterion benchmarks of the solver kernels; run with `cargo bench -p sdfsnn-bench`.
