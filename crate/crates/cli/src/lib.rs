//! Benchmarks, ablations, dataset synthesis and quality reports behind the
//! `pgden` command-line tool.

pub mod ablation;
pub mod bench;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod report;

pub use ablation::{run_ablation, AblationAxis, AblationOutcome};
pub use bench::{bench_estimation, bench_estimation_dir, parse_levels, BenchConfig, FitMode, NoiseLevel};
pub use error::{CliError, CliResult};
pub use report::{BenchReport, Cell};
