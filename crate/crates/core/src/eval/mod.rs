//! Scoring and experiments: confusion counts, derived metrics, latency
//! statistics, dataset generation, end-to-end runs and backend comparisons.

mod compare;
mod experiment;
mod generate;
mod latency;
mod metrics;

pub use compare::{compare_backends, csv_string, write_csv, Comparison, ComparisonRow, CSV_HEADER};
pub use experiment::{
    dataset_digest, frame_outcomes, run_experiment, simulate, tally, DeliveryStats, Enrollment, Experiment,
    ExperimentConfig, ExperimentReport, FrameResult, OverallMetrics, ResourceRow, SimulationSummary,
    DEFAULT_EVENT_SPACING_MS,
};
pub use generate::{default_positive_fraction, device_name, generate_dataset, DatasetSpec};
pub use latency::{latency_stats, LatencySample, LatencyStats};
pub use metrics::{classify_outcome, compute_metrics, f1_score, ConfusionCounts, Metrics, MetricsReport, Outcome};
