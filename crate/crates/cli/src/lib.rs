//! Library surface behind the `miniseg` binary: analytic FLOP/parameter
//! accounting, the latency harness, evaluation drivers, gradient-check
//! suites, and PPM visualization output.

pub mod evalrun;
pub mod flops;
pub mod gradsuite;
pub mod latency;
pub mod ppm;
