//! Test oracles: straightforward f64 loop implementations of every kernel
//! plus central finite differences. Nothing here shares code with the
//! optimized kernels it is used to check.

pub mod fd;
pub mod reference;
pub mod student;
