//! Benchmark platform for locally differentially private frequency estimation.
//!
//! * [`protocols`]: six frequency oracles (GRR, BLH, OLH, RAPPOR, OUE, SS).
//! * [`postprocess`]: seven post-processing methods plus the identity baseline.
//! * [`metrics`]: L1, L2, KL divergence and earth mover's distance.
//! * [`datasets`]: synthetic generators and loaders for real datasets.
//! * [`engine`]: reproducible, chunk-parallel execution of experiment matrices.
//! * [`report`]: result files and best-method win tables.
//!
//! Parallelism comes from rayon behind the default `parallel` feature.
//! Without it every task runs on the calling thread; results are identical
//! either way.

pub mod datasets;
pub mod engine;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod oracle;
pub mod postprocess;
pub mod protocols;
pub mod report;
pub mod seed;
pub mod validate;

pub use error::{Error, Result};
pub use exec::ExecPolicy;
