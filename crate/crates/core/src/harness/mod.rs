//! Metrics, controller comparisons, ablations and report files.

mod comparison;
mod metrics;
mod report;

pub use comparison::{
    evaluate_harmonic_mean, evaluate_model, run_ablations, run_comparison, AblationDelta, AblationModels,
    AblationSection, ComparisonConfig, ComparisonReport, Contender, ControllerSummary, PairStat, PredictorEval,
    SessionRow, Variant, OFFLINE_OPTIMAL,
};
pub use metrics::{cdf, improvement_pct, mape, mean, qoe_breakdown, MetricError, QoeBreakdown};
pub use report::{
    ablation_table, mape_table, qoe_cdf_table, submetric_table, text_report, timeseries_table, write_report, Summary,
};

use crate::simulator::SimError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("{0}")]
    Config(String),
    #[error("{controller} on {trace}: {source}")]
    Session {
        controller: String,
        trace: String,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
