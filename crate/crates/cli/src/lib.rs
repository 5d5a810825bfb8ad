//! File formats, the benchmark suite runner, plot output and the command
//! line around `aoa-nav-core`.

pub mod checks;
pub mod output;
pub mod plan;
pub mod scenario;
pub mod suite;
