//! Workloads, experiments and the command-line driver for the Memento
//! range filter.
//!
//! ```no_run
//! use memento_bench::experiments::run_fpr_experiment;
//! use memento_bench::workload::{QueryKind, WorkloadSpec};
//!
//! let spec = WorkloadSpec {
//!     n_keys: 100_000,
//!     queries: QueryKind::Correlated(0.8),
//!     ..WorkloadSpec::default()
//! };
//! let report = run_fpr_experiment(&spec).unwrap();
//! assert!(report.fpr_within_bound());
//! ```

pub mod cli;
pub mod error;
pub mod experiments;
pub mod report;
pub mod workload;

pub use error::{BenchError, Result};
pub use report::BenchReport;
pub use workload::WorkloadSpec;
