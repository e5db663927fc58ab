//! Coverage, correlation, storage, and latency measurements.

mod latency;
mod metrics;
mod report;
mod storage;
mod synthetic;

pub use latency::{measure_latency, median, percentile, BenchConfig, LatencyRun, LatencyStats, SearchBackend};
pub use metrics::{
    correlation_at_k, coverage_at_k, mean_correlation, mean_coverage, ConstantScorer, RelevanceScorer,
    ShiftedCosineScorer,
};
pub use report::{emit_report, BackendReport, EvalReport, ReportTables};
pub use storage::{format_size, measure_storage, IndexKind, StorageReport};
pub use synthetic::{build_synthetic_benchmark, SyntheticBenchmark, SyntheticConfig};
