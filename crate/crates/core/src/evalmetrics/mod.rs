//! Depth-accuracy metrics, evaluation reports and training-curve plots.

pub mod metrics;
pub mod plot;
pub mod report;

pub use metrics::{
    abs_rel, delta_accuracy, median_scaled, rmse, MetricAccumulator, MetricReport, DELTA_KEYS,
    DELTA_THRESHOLDS, PRED_FLOOR_MM,
};
pub use report::{evaluate_run, EvalReport, EvalTarget, ReportRow};
